"""Training-free 3D scene abstraction for answering spatial questions.

Per-view object masks are lifted through depth into 3D proxy points, fused
across synthesized viewpoints by consensus voting into oriented boxes, and
rendered or serialized back into a vision-language model's prompt.
"""

from .errors import (
    AnswerParseError,
    BehindCameraError,
    BundleFormatError,
    ConfigError,
    EmptyMaskError,
    EmptyProxyError,
    EmptySandboxError,
    GenerationError,
    HintParseError,
    MissingViewError,
    ObjectNotFoundError,
    ProviderError,
    Sandbox3dError,
)
from .scene_model import (
    CameraIntrinsics,
    CameraPose,
    DepthGrid,
    InstanceMask,
    OrientedBox3,
    ProxyCloud,
    SandboxScene,
    ViewFrame,
    ViewId,
    backproject_pixels,
    merge_clouds,
)
from .trajectory_control import (
    AbstractMotion,
    TrajectorySpec,
    instantiate_trajectories,
    parse_motion,
)
from .proxy_elevation import ElevationParams, ObjectHint, elevate_object, lift_proxies
from .voting_clustering import (
    ClusterParams,
    ConsensusParams,
    build_sandbox,
    filter_by_consensus,
    fit_obb,
)
from .sandbox_render import (
    OrthoCamera,
    PerspectiveCamera,
    RenderStyle,
    RenderedView,
    legend_lines,
    render_boxes,
    render_points,
    stepback_camera,
    topdown_camera,
)
from .synthetic_world import (
    BENCHMARK_BOUNDS,
    CuboidSpec,
    WorldBounds,
    WorldSpec,
    build_benchmark,
    generate_questions,
    generate_world,
    oracle_answer,
)
from .qa import QARecord, evaluate_question, read_benchmark, write_benchmark
from .bundle import SceneBundle, load_bundle, write_bundle
from .providers import (
    ChatTurn,
    DecodeParams,
    GeometryMockVlm,
    HttpChatVlm,
    ImagePart,
    RandomMockVlm,
    ScriptedVlm,
    SyntheticSceneProvider,
    TextPart,
    parse_answer,
    parse_object_hints,
)
from .pipeline import (
    MODES,
    PipelineConfig,
    PipelineResult,
    ProviderSet,
    RunReport,
    compose_prompt,
    config_from_ini,
    run_eval,
    run_pipeline,
    serialize_text_coords,
)

__version__ = "0.1.0"

__all__ = [
    "AbstractMotion",
    "AnswerParseError",
    "BENCHMARK_BOUNDS",
    "BehindCameraError",
    "BundleFormatError",
    "CameraIntrinsics",
    "CameraPose",
    "ChatTurn",
    "ClusterParams",
    "ConfigError",
    "ConsensusParams",
    "CuboidSpec",
    "DecodeParams",
    "DepthGrid",
    "ElevationParams",
    "EmptyMaskError",
    "EmptyProxyError",
    "EmptySandboxError",
    "GenerationError",
    "GeometryMockVlm",
    "HintParseError",
    "HttpChatVlm",
    "ImagePart",
    "InstanceMask",
    "MODES",
    "MissingViewError",
    "ObjectHint",
    "ObjectNotFoundError",
    "OrientedBox3",
    "OrthoCamera",
    "PerspectiveCamera",
    "PipelineConfig",
    "PipelineResult",
    "ProviderError",
    "ProviderSet",
    "ProxyCloud",
    "QARecord",
    "RandomMockVlm",
    "RenderStyle",
    "RenderedView",
    "RunReport",
    "Sandbox3dError",
    "SandboxScene",
    "SceneBundle",
    "ScriptedVlm",
    "SyntheticSceneProvider",
    "TextPart",
    "TrajectorySpec",
    "ViewFrame",
    "ViewId",
    "WorldBounds",
    "WorldSpec",
    "backproject_pixels",
    "build_benchmark",
    "build_sandbox",
    "compose_prompt",
    "config_from_ini",
    "elevate_object",
    "evaluate_question",
    "filter_by_consensus",
    "fit_obb",
    "generate_questions",
    "generate_world",
    "instantiate_trajectories",
    "legend_lines",
    "lift_proxies",
    "load_bundle",
    "merge_clouds",
    "oracle_answer",
    "parse_answer",
    "parse_motion",
    "parse_object_hints",
    "read_benchmark",
    "render_boxes",
    "render_points",
    "run_eval",
    "run_pipeline",
    "serialize_text_coords",
    "stepback_camera",
    "topdown_camera",
    "write_benchmark",
    "write_bundle",
    "__version__",
]
