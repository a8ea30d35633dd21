import random

import pytest

WORDS = ["good", "bad", "great", "awful", "movie", "plot", "the", "a", "was", "very", "not", "fine"]


@pytest.fixture(scope="session")
def tiny_model(tmp_path_factory):
    """A randomly initialised 12-layer BERT classifier with a word-level vocabulary."""
    import torch
    from transformers import BertConfig, BertForSequenceClassification, BertTokenizer

    d = tmp_path_factory.mktemp("model")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
    (d / "vocab.txt").write_text("\n".join(vocab) + "\n")
    BertTokenizer(str(d / "vocab.txt")).save_pretrained(d)
    torch.manual_seed(0)
    cfg = BertConfig(
        vocab_size=len(vocab),
        hidden_size=8,
        num_hidden_layers=12,
        num_attention_heads=2,
        intermediate_size=16,
        max_position_embeddings=64,
        num_labels=2,
    )
    BertForSequenceClassification(cfg).save_pretrained(d)
    return d


def write_tsv(path, n, pair=False, seed=0, min_words=2, max_words=8):
    rng = random.Random(seed)
    head = "id\ttext_a\ttext_b\tlabel\tsplit" if pair else "id\ttext\tlabel\tsplit"
    lines = [head]
    for i in range(n):
        text = " ".join(rng.choice(WORDS) for _ in range(rng.randint(min_words, max_words)))
        label = int("good" in text or "great" in text)
        split = "dev" if i % 5 == 0 else "train"
        if pair:
            other = " ".join(rng.choice(WORDS) for _ in range(rng.randint(min_words, max_words)))
            lines.append(f"ex{i}\t{text}\t{other}\t{label}\t{split}")
        else:
            lines.append(f"ex{i}\t{text}\t{label}\t{split}")
    path.write_text("\n".join(lines) + "\n")
    return path
