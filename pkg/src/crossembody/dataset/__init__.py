from .augment import augment_complementary, augment_with_report
from .demos import (
    EMBODIMENTS,
    Demonstration,
    ReachTaskConfig,
    generate_synthetic_demos,
    goal_pose,
    make_human_demo,
    make_robot_demo,
    min_jerk,
    reach_path,
    reach_poses,
)
from .io import read_dataset, read_manifest, write_dataset, write_manifest
from .samples import (
    SampleIndex,
    TrainingSample,
    chunk_samples,
    compute_norm_stats,
    compute_scene_stats,
    expected_sample_count,
)

__all__ = [
    "EMBODIMENTS",
    "Demonstration",
    "ReachTaskConfig",
    "SampleIndex",
    "TrainingSample",
    "augment_complementary",
    "augment_with_report",
    "chunk_samples",
    "compute_norm_stats",
    "compute_scene_stats",
    "expected_sample_count",
    "generate_synthetic_demos",
    "goal_pose",
    "make_human_demo",
    "make_robot_demo",
    "min_jerk",
    "reach_path",
    "reach_poses",
    "read_dataset",
    "read_manifest",
    "write_dataset",
    "write_manifest",
]
