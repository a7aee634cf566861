#!/usr/bin/env python3
"""JSON-lines training worker for `student.adapter = "process"`.

Wraps a Hugging Face encoder-decoder (default google/long-t5-tglobal-base)
and answers the requests sent by the Rust ProcessAdapter on stdin/stdout.
Logs go to stderr; stdout carries protocol replies only.
"""

import argparse
import json
import sys

import torch
from transformers import AutoModelForSeq2SeqLM, AutoTokenizer


def log(msg):
    print(msg, file=sys.stderr, flush=True)


class Worker:
    def __init__(self, model_name, device):
        self.device = torch.device(device)
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(model_name).to(self.device)
        self.config = {
            "learning_rate": 1e-4,
            "weight_decay": 0.01,
            "max_input_tokens": 2048,
            "max_target_tokens": 512,
        }
        self.optimizer = None

    def configure(self, req):
        self.config.update(req.get("config", {}))
        self.optimizer = torch.optim.AdamW(
            self.model.parameters(),
            lr=self.config["learning_rate"],
            weight_decay=self.config["weight_decay"],
        )
        return {"ok": True}

    def fit_epoch(self, req):
        if self.optimizer is None:
            self.configure({})
        self.model.train()
        losses = []
        for batch in req["batches"]:
            enc = self.tokenizer(
                [r["input"] for r in batch],
                max_length=self.config["max_input_tokens"],
                truncation=True,
                padding=True,
                return_tensors="pt",
            ).to(self.device)
            labels = self.tokenizer(
                text_target=[r["target"] for r in batch],
                max_length=self.config["max_target_tokens"],
                truncation=True,
                padding=True,
                return_tensors="pt",
            ).input_ids.to(self.device)
            labels[labels == self.tokenizer.pad_token_id] = -100
            loss = self.model(**enc, labels=labels).loss
            loss.backward()
            self.optimizer.step()
            self.optimizer.zero_grad()
            losses.append(loss.item())
        return {"ok": True, "loss": sum(losses) / max(len(losses), 1)}

    @torch.no_grad()
    def generate(self, req):
        self.model.eval()
        enc = self.tokenizer(
            req["input"],
            max_length=self.config["max_input_tokens"],
            truncation=True,
            return_tensors="pt",
        ).to(self.device)
        out = self.model.generate(
            **enc, max_new_tokens=req.get("max_new_tokens", 512), do_sample=False, num_beams=1
        )
        return {"ok": True, "text": self.tokenizer.decode(out[0], skip_special_tokens=True)}

    def save(self, req):
        self.model.save_pretrained(req["dir"])
        self.tokenizer.save_pretrained(req["dir"])
        return {"ok": True}

    def load(self, req):
        self.model = AutoModelForSeq2SeqLM.from_pretrained(req["dir"]).to(self.device)
        self.optimizer = None
        return {"ok": True}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--model", default="google/long-t5-tglobal-base")
    parser.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    parser.add_argument("--seed", type=int, default=22)
    args = parser.parse_args()
    torch.manual_seed(args.seed)
    worker = Worker(args.model, args.device)
    ops = {
        "configure": worker.configure,
        "fit_epoch": worker.fit_epoch,
        "generate": worker.generate,
        "save": worker.save,
        "load": worker.load,
    }
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            handler = ops.get(req.get("op"))
            reply = handler(req) if handler else {"ok": False, "error": f"unknown op {req.get('op')}"}
        except Exception as exc:  # reported to the caller, which aborts the run
            log(f"worker error: {exc!r}")
            reply = {"ok": False, "error": repr(exc)}
        print(json.dumps(reply), flush=True)


if __name__ == "__main__":
    main()
