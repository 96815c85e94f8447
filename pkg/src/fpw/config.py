"""Pipeline configuration: one JSON file holding every tunable parameter.

Angles are stored in degrees in the file and converted to radians on
load.  Every parameter has a default; a config file only needs the keys
it overrides.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .compositor import CompositeLayout
from .geometry import FisheyeCamera
from .nms import NmsConfig

ENV_CONFIG = "FPW_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    camera: FisheyeCamera = FisheyeCamera(400.0, 400.0, 400.0, np.pi / 2)
    image_width: int = 800
    image_height: int = 800
    layout: CompositeLayout = CompositeLayout()
    tta_offset: float = np.radians(22.5)
    # exemplar building
    person_heights: tuple = (1.3, 1.5, 1.7)
    person_diameters: tuple = (0.45, 0.6)
    scene_camera_heights: tuple = (2.75, 3.25)
    target_overlap: float = 0.8
    min_containment: float = 0.1
    min_target_height_px: float = 20.0
    max_ellipse_samples: int = 4096
    # box mapping
    k_r: int = 10
    scaling_mode: str = "both"
    score_min: float = 0.05
    nms: NmsConfig = NmsConfig()
    # evaluation
    match_iou: float = 0.5
    ap_interpolation: str = "all_point"
    lamr_geometric: bool = False
    report_threshold: float = 0.2
    # caches
    lut_dir: str | None = None
    exemplar_cache: str | None = None

    def exemplar_params(self) -> dict:
        return {
            "person_heights": list(self.person_heights),
            "person_diameters": list(self.person_diameters),
            "scene_camera_heights": list(self.scene_camera_heights),
            "target_overlap": self.target_overlap,
            "min_containment": self.min_containment,
            "min_target_height_px": self.min_target_height_px,
            "max_ellipse_samples": self.max_ellipse_samples,
        }


def config_to_dict(cfg: PipelineConfig) -> dict:
    cam = cfg.camera
    lay = cfg.layout
    return {
        "camera": {
            "center_x": cam.center_x,
            "center_y": cam.center_y,
            "radius": cam.radius,
            "theta0_deg": float(np.degrees(cam.max_angle)),
        },
        "image_width": cfg.image_width,
        "image_height": cfg.image_height,
        "layout": {
            "n_patches": lay.n_patches,
            "patch_w": lay.patch_w,
            "patch_h": lay.patch_h,
            "columns": lay.columns,
            "rows": lay.rows,
            "composite_size": lay.composite_size,
            "phi2_base_deg": float(np.degrees(lay.phi2_base)),
            "phi1_deg": float(np.degrees(lay.phi1)),
            "alpha_x_deg": float(np.degrees(lay.alpha_x)),
            "alpha_y_deg": float(np.degrees(lay.alpha_y)),
        },
        "tta_offset_deg": float(np.degrees(cfg.tta_offset)),
        "person_heights": list(cfg.person_heights),
        "person_diameters": list(cfg.person_diameters),
        "scene_camera_heights": list(cfg.scene_camera_heights),
        "target_overlap": cfg.target_overlap,
        "min_containment": cfg.min_containment,
        "min_target_height_px": cfg.min_target_height_px,
        "max_ellipse_samples": cfg.max_ellipse_samples,
        "k_r": cfg.k_r,
        "scaling_mode": cfg.scaling_mode,
        "score_min": cfg.score_min,
        "nms": {
            "stage1_enabled": cfg.nms.stage1_enabled,
            "stage1_iou": cfg.nms.stage1_iou,
            "stage2_method": cfg.nms.stage2_method,
            "hard_iou": cfg.nms.hard_iou,
            "a_g": cfg.nms.a_g,
            "bbr_kernel_frac": cfg.nms.bbr_kernel_frac,
            "score_floor": cfg.nms.score_floor,
        },
        "match_iou": cfg.match_iou,
        "ap_interpolation": cfg.ap_interpolation,
        "lamr_geometric": cfg.lamr_geometric,
        "report_threshold": cfg.report_threshold,
        "lut_dir": cfg.lut_dir,
        "exemplar_cache": cfg.exemplar_cache,
    }


def config_from_dict(data: dict) -> PipelineConfig:
    base = config_to_dict(PipelineConfig())
    unknown = set(data) - set(base)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(base)
    for key, val in data.items():
        if isinstance(base.get(key), dict):
            sub_unknown = set(val) - set(base[key])
            if sub_unknown:
                raise ConfigError(f"unknown {key} keys: {sorted(sub_unknown)}")
            merged[key] = {**base[key], **val}
        else:
            merged[key] = val
    try:
        cam = merged["camera"]
        lay = merged["layout"]
        nms = merged["nms"]
        return PipelineConfig(
            camera=FisheyeCamera(
                center_x=float(cam["center_x"]),
                center_y=float(cam["center_y"]),
                radius=float(cam["radius"]),
                max_angle=float(np.radians(cam["theta0_deg"])),
            ),
            image_width=int(merged["image_width"]),
            image_height=int(merged["image_height"]),
            layout=CompositeLayout(
                n_patches=int(lay["n_patches"]),
                patch_w=int(lay["patch_w"]),
                patch_h=int(lay["patch_h"]),
                columns=int(lay["columns"]),
                rows=int(lay["rows"]),
                composite_size=int(lay["composite_size"]),
                phi2_base=float(np.radians(lay["phi2_base_deg"])),
                phi1=float(np.radians(lay["phi1_deg"])),
                alpha_x=float(np.radians(lay["alpha_x_deg"])),
                alpha_y=float(np.radians(lay["alpha_y_deg"])),
            ),
            tta_offset=float(np.radians(merged["tta_offset_deg"])),
            person_heights=tuple(merged["person_heights"]),
            person_diameters=tuple(merged["person_diameters"]),
            scene_camera_heights=tuple(merged["scene_camera_heights"]),
            target_overlap=float(merged["target_overlap"]),
            min_containment=float(merged["min_containment"]),
            min_target_height_px=float(merged["min_target_height_px"]),
            max_ellipse_samples=int(merged["max_ellipse_samples"]),
            k_r=int(merged["k_r"]),
            scaling_mode=str(merged["scaling_mode"]),
            score_min=float(merged["score_min"]),
            nms=NmsConfig(
                stage1_enabled=bool(nms["stage1_enabled"]),
                stage1_iou=float(nms["stage1_iou"]),
                stage2_method=str(nms["stage2_method"]),
                hard_iou=float(nms["hard_iou"]),
                a_g=float(nms["a_g"]),
                bbr_kernel_frac=float(nms["bbr_kernel_frac"]),
                score_floor=float(nms["score_floor"]),
            ),
            match_iou=float(merged["match_iou"]),
            ap_interpolation=str(merged["ap_interpolation"]),
            lamr_geometric=bool(merged["lamr_geometric"]),
            report_threshold=float(merged["report_threshold"]),
            lut_dir=merged["lut_dir"],
            exemplar_cache=merged["exemplar_cache"],
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid config: {e}") from e


def load_config(path=None) -> PipelineConfig:
    """Load a config file; falls back to $FPW_CONFIG, then to defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if path is None:
        return PipelineConfig()
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    return config_from_dict(data)


def save_config(path, cfg: PipelineConfig) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2)
