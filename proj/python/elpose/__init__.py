"""Python bindings for the elpose C++ core."""

from ._core import (
    NUM_JOINTS,
    AnalyticSystem,
    ElposeError,
    MissingCheckpoint,
    clip_domain_star,
    clip_smooth_star,
    energy,
    fit_camera,
    frechet_distance,
    fuse_poses,
    joint_heatmaps,
    lift,
    load_poses,
    mpjpe,
    mpjve,
    n_mpjpe,
    pack_upper,
    project,
    read_pyramid,
    reestimate,
    root_center,
    run_cli,
    save_poses,
    simulate,
    skeleton_heatmaps,
    solve_acceleration,
    symmetrize,
    synth_pose_dataset,
    verify_el_identity,
)

__version__ = "0.1.0"
