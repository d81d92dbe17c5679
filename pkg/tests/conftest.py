import dataclasses

import pytest
import torch

from src.runconfig import RunConfig
from src.tokenizer import PyramidTokenizer, ScaleSchedule
from src.transformer import ScalewiseTransformer

TINY_SCHEDULE = "1x1,2x2,4x4"


@pytest.fixture
def tiny_schedule():
    return ScaleSchedule.from_string(TINY_SCHEDULE)


@pytest.fixture
def tiny_tokenizer(tiny_schedule):
    torch.manual_seed(0)
    model = PyramidTokenizer(tiny_schedule, vocab=16, embed_dim=4, hidden=8, downsample=4, seed=0)
    return model.eval()


@pytest.fixture
def tiny_images():
    gen = torch.Generator().manual_seed(1)
    return torch.rand(4, 3, 16, 16, generator=gen)


@pytest.fixture
def tiny_teacher(tiny_tokenizer):
    torch.manual_seed(2)
    model = ScalewiseTransformer(tiny_tokenizer.schedule, tiny_tokenizer.codebook,
                                 layers=2, model_dim=16, heads=2)
    return model.eval()


@pytest.fixture
def tiny_config():
    cfg = RunConfig()
    return dataclasses.replace(
        cfg,
        run=dataclasses.replace(cfg.run, workers=1, log_every=1),
        tokenizer=dataclasses.replace(
            cfg.tokenizer, image_size=16, downsample=4, embed_dim=4, vocab=16, hidden=8,
            schedule=TINY_SCHEDULE, steps=2, batch_size=2,
        ),
        backbone=dataclasses.replace(cfg.backbone, layers=1, model_dim=16, heads=2),
        teacher=dataclasses.replace(cfg.teacher, steps=2, batch_size=2),
        adapter=dataclasses.replace(cfg.adapter, rank=2),
        distill=dataclasses.replace(cfg.distill, steps=2, batch_size=2, restorer_channels=4),
        sampling=dataclasses.replace(cfg.sampling, zero_shot_scale=1),
    )
