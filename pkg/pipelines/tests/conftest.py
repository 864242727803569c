import random

import pytest
import torch

from pipelines.encoders import HashedTrigramEncoder
from pipelines.lm import PrefixLM, pretrain_lm_with_prefixes
from pipelines.sba import PrefixProjection, SbaConfig, sba_train

WORDS = ("river stone garden market tiger window harbor violin meadow lantern copper "
         "bridge saddle forest candle marble orchid thunder basket velvet anchor barrel "
         "canyon dolphin engine falcon glacier hammer island jungle kettle ladder magnet "
         "needle ocean pepper quartz rocket shadow temple turnip umbrella walnut yarrow "
         "zephyr almond beacon cradle dagger ember fiddle goblet hollow ivory jasper").split()


def make_captions(n: int, seed: int = 7, min_words: int = 3, max_words: int = 6) -> list[str]:
    rng = random.Random(seed)
    captions: list[str] = []
    seen = set()
    while len(captions) < n:
        caption = " ".join(rng.choices(WORDS, k=rng.randint(min_words, max_words)))
        if caption not in seen:
            seen.add(caption)
            captions.append(caption)
    return captions


@pytest.fixture(scope="session")
def caption_corpus() -> list[str]:
    return make_captions(500)


@pytest.fixture(scope="session")
def frozen_stack(caption_corpus):
    """Deterministic encoder plus a decoder pretrained to exploit prefixes."""
    torch.set_num_threads(4)
    encoder = HashedTrigramEncoder(seed=0)
    lm = PrefixLM(seed=1)
    reference = PrefixProjection(encoder.output_dim, prefix_length=8,
                                 lm_embed_dim=lm.embed_dim, seed=2)
    pretrain_lm_with_prefixes(lm, encoder, reference, caption_corpus,
                              epochs=32, batch_size=64, learning_rate=2e-3, max_len=48)
    return encoder, lm


@pytest.fixture(scope="session")
def sba_toy_config() -> SbaConfig:
    return SbaConfig(prefix_length=8, epochs=32, batch_size=64,
                     learning_rate=3e-3, max_len=48, seed=3)


@pytest.fixture(scope="session")
def trained_sba(caption_corpus, frozen_stack, sba_toy_config):
    encoder, lm = frozen_stack
    return sba_train(caption_corpus, sba_toy_config, encoder=encoder, lm=lm)
