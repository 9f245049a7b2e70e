"""Config validation, variant wiring, and JSON round-trips."""

import dataclasses

import pytest

from cred.config import (
    CRED_VARIANTS,
    VARIANTS,
    ConfigError,
    CramConfig,
    DetrConfig,
    FlopConvention,
    OsmaConfig,
    PipelineConfig,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    for_variant,
    load_config,
    paper_config,
    save_config,
    toy_config,
)


# ---- validation names the offending field ------------------------------------


@pytest.mark.parametrize(
    "mutation, field_name",
    [
        (dict(detr=DetrConfig(variant="nope")), "detr.variant"),
        (dict(detr=DetrConfig(d_model=30)), "detr.d_model"),
        (dict(detr=DetrConfig(d_model=32, heads=5)), "detr.heads"),
        (dict(detr=DetrConfig(enc_layers=0)), "detr.enc_layers"),
        (dict(detr=DetrConfig(num_classes=0)), "detr.num_classes"),
        (dict(detr=DetrConfig(baseline_downsample=0)), "detr.baseline_downsample"),
        (dict(image=(48, 64)), "image"),
        (dict(osma=OsmaConfig(n_levels=4)), "osma.n_levels"),
        (dict(train=TrainConfig(steps=0)), "train.steps"),
        (dict(train=TrainConfig(momentum=1.0)), "momentum"),
        (dict(train=TrainConfig(schedule="linear")), "train.schedule"),
        (dict(train=TrainConfig(final_lr_factor=1.5)), "train.final_lr_factor"),
        (dict(train=TrainConfig(min_size=0)), "train.min_size"),
        (dict(train=TrainConfig(eval_iou=1.0)), "train.eval_iou"),
        (dict(flops=FlopConvention(backbone_macs=-1.0)), "flops.backbone_macs"),
        (dict(flops=FlopConvention(backbone_channels=0)), "flops.backbone_channels"),
    ],
)
def test_validate_names_bad_field(mutation, field_name):
    cfg = dataclasses.replace(PipelineConfig(), **mutation)
    with pytest.raises(ConfigError, match=field_name.replace(".", r"\.")):
        cfg.validate()


def test_cram_depth_must_match_encoder_for_cred_variants():
    cfg = PipelineConfig(
        detr=DetrConfig(variant="default", enc_layers=2),
        cram=CramConfig(num_layers=3),
    )
    with pytest.raises(ConfigError, match="cram.num_layers"):
        cfg.validate()
    # Non-CRED variants do not couple the two.
    dataclasses.replace(
        cfg, detr=dataclasses.replace(cfg.detr, variant="baseline")
    ).validate()


def test_oo_requires_decoder_mixer():
    cfg = PipelineConfig(detr=DetrConfig(variant="oo"), cram=CramConfig(num_layers=2))
    with pytest.raises(ConfigError, match="osma_decoder"):
        cfg.validate()


# ---- canonical wiring ----------------------------------------------------------


def test_for_variant_covers_all_names():
    for variant in VARIANTS:
        cfg = for_variant(variant)
        assert cfg.variant == variant


def test_for_variant_grid_cells():
    assert for_variant("default").osma.base_cell == 1
    assert for_variant("dcx025").osma.base_cell == 2
    oo = for_variant("oo")
    assert oo.osma_decoder is not None
    assert oo.osma_decoder.out_cells == 4
    assert oo.osma.out_cells == 1


def test_toy_config_is_valid_for_every_variant():
    for variant in VARIANTS:
        cfg = toy_config(variant, seed=3)
        cfg.validate()
        assert cfg.seed == 3
        assert cfg.image == (64, 64)
        assert cfg.cram.source_level == 2


def test_paper_config_scale():
    cfg = paper_config()
    assert cfg.detr.d_model == 256
    assert cfg.detr.enc_layers == cfg.detr.dec_layers == 6
    assert cfg.image == (800, 1280)
    assert cfg.variant in CRED_VARIANTS


# ---- dict / file round-trips -----------------------------------------------------


def test_dict_round_trip_preserves_everything():
    cfg = for_variant("oo")
    back = config_from_dict(config_to_dict(cfg))
    assert back == cfg


def test_file_round_trip(tmp_path):
    cfg = toy_config("dcx025", seed=5)
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_top_level_variant_key_sets_detr_variant():
    cfg = config_from_dict({"variant": "dc", "cram": {"num_layers": 2}})
    assert cfg.variant == "dc"


def test_unknown_fields_are_named():
    with pytest.raises(ConfigError, match="wheels"):
        config_from_dict({"wheels": 4})
    with pytest.raises(ConfigError, match=r"detr\.flux"):
        config_from_dict({"detr": {"flux": 1}})


def test_malformed_values_are_named():
    with pytest.raises(ConfigError, match="seed"):
        config_from_dict({"seed": "zero"})
    with pytest.raises(ConfigError, match="image"):
        config_from_dict({"image": [64]})
    with pytest.raises(ConfigError, match="train"):
        config_from_dict({"train": {"lr": "fast"}})


def test_load_config_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_round_trip_of_none_optional_fields():
    cfg = PipelineConfig(
        flops=FlopConvention(backbone_macs=74e9),
        train=TrainConfig(clip_norm=None),
    )
    data = config_to_dict(cfg)
    back = config_from_dict(data)
    assert back.flops.backbone_macs == 74e9
    assert back.train.clip_norm is None
    assert back.osma_decoder is None
