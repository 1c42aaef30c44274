"""Optional transformers backend for hosting a real instruction-tuned
model behind the same interface as the built-in statistical one.

Determinism holds for a fixed (model, seed, request) on a fixed runtime;
bigscience/T0_3B is the reference choice, any seq2seq or causal LM id
works. Imports stay inside the class so the service runs without torch
installed when the built-in backend is selected.
"""

from __future__ import annotations


class HfModel:
    def __init__(self, model_id: str, device: str = "cpu"):
        import torch
        from transformers import AutoConfig, AutoModelForCausalLM, AutoModelForSeq2SeqLM, AutoTokenizer

        self.model_id = model_id
        self.device = device
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        config = AutoConfig.from_pretrained(model_id)
        if config.is_encoder_decoder:
            self.model = AutoModelForSeq2SeqLM.from_pretrained(model_id)
            self.is_encoder_decoder = True
        else:
            self.model = AutoModelForCausalLM.from_pretrained(model_id)
            self.is_encoder_decoder = False
        self.model.to(device)
        self.model.eval()

    def generate(self, prompt, top_p=0.9, top_k=0, temperature=1.0, max_new_tokens=64, seed=0):
        torch = self._torch
        inputs = self.tokenizer(prompt, return_tensors="pt", truncation=True).to(self.device)
        torch.manual_seed(seed)
        with torch.no_grad():
            output = self.model.generate(
                **inputs,
                do_sample=True,
                top_p=top_p,
                top_k=top_k,
                temperature=temperature,
                max_new_tokens=max_new_tokens,
            )
        if not self.is_encoder_decoder:
            output = output[:, inputs["input_ids"].shape[1]:]
        return self.tokenizer.decode(output[0], skip_special_tokens=True)

    def score(self, context: str, continuation: str) -> float:
        """-log p(continuation | context) summed over continuation tokens."""
        torch = self._torch
        if self.is_encoder_decoder:
            enc = self.tokenizer(context, return_tensors="pt", truncation=True).to(self.device)
            labels = self.tokenizer(continuation, return_tensors="pt").input_ids.to(self.device)
            with torch.no_grad():
                out = self.model(**enc, labels=labels)
            return float(out.loss) * labels.shape[1]
        full = self.tokenizer(context + " " + continuation, return_tensors="pt").to(self.device)
        ctx_len = self.tokenizer(context, return_tensors="pt").input_ids.shape[1]
        with torch.no_grad():
            logits = self.model(**full).logits
        log_probs = torch.log_softmax(logits[0, :-1], dim=-1)
        targets = full.input_ids[0, 1:]
        token_lls = log_probs[range(len(targets)), targets]
        return float(-token_lls[ctx_len - 1 :].sum())
