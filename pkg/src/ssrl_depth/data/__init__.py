from .dataset import (
    DataConfig,
    DatasetLoadError,
    DatasetManifest,
    DomainSample,
    SampleRecord,
    build_dataset,
    decode_depth,
    encode_depth,
    load_domain_arrays,
    load_eval_depth,
    load_sample,
)
from .scene import (
    Box,
    Camera,
    InvalidSceneError,
    Plane,
    SceneSpec,
    Sphere,
    StyleParams,
    default_camera,
    ray_cast,
    render_scene,
    sample_scene,
)

__all__ = [
    "Box", "Camera", "DataConfig", "DatasetLoadError", "DatasetManifest", "DomainSample",
    "InvalidSceneError", "Plane", "SampleRecord", "SceneSpec", "Sphere", "StyleParams",
    "build_dataset", "decode_depth", "default_camera", "encode_depth", "load_domain_arrays",
    "load_eval_depth", "load_sample", "ray_cast", "render_scene", "sample_scene",
]
