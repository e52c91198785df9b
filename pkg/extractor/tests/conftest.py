import json

import pytest
import torch
from tokenizers import Tokenizer, models, pre_tokenizers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

WORDS = [
    "hello", "world", "tiny", "model", "tokens", "flow", "through",
    "layers", "and", "pool", "into", "rows",
]


@pytest.fixture(scope="session")
def toy_model_dir(tmp_path_factory):
    """A 2-layer causal LM with hidden size 8 and a word-level tokenizer."""
    d = tmp_path_factory.mktemp("toy-model")
    vocab = {"[UNK]": 0, "[PAD]": 1, "[EOS]": 2}
    for w in WORDS:
        vocab[w] = len(vocab)
    tok = Tokenizer(models.WordLevel(vocab=vocab, unk_token="[UNK]"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, unk_token="[UNK]", pad_token="[PAD]", eos_token="[EOS]"
    )
    fast.save_pretrained(d)

    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=len(vocab), n_embd=8, n_layer=2, n_head=2, n_positions=64,
        bos_token_id=vocab["[EOS]"], eos_token_id=vocab["[EOS]"],
    )
    GPT2LMHeadModel(config).save_pretrained(d)
    return str(d)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
