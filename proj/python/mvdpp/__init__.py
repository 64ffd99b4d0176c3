"""Multi-view conditional diffusion pipeline: python bindings.

Thin wrapper over the compiled extension. Exposes noise schedules, camera
geometry, the procedural renderer/voxelizer, visual-hull carving, training
samplers, and the image/shape metrics.
"""

try:
    from ._mvdpp import (  # noqa: F401
        build_dataset,
        camera_pose,
        carve,
        chamfer,
        dropout_views,
        generation_view_grid,
        linear_schedule,
        psnr,
        render_object,
        sample_conditions,
        snr,
        ssim,
        step_sequence,
        voxelize_object,
    )
except ImportError:  # running from the build tree, module not packaged yet
    from _mvdpp import (  # noqa: F401
        build_dataset,
        camera_pose,
        carve,
        chamfer,
        dropout_views,
        generation_view_grid,
        linear_schedule,
        psnr,
        render_object,
        sample_conditions,
        snr,
        ssim,
        step_sequence,
        voxelize_object,
    )

__all__ = [
    "build_dataset",
    "camera_pose",
    "carve",
    "chamfer",
    "dropout_views",
    "generation_view_grid",
    "linear_schedule",
    "psnr",
    "render_object",
    "sample_conditions",
    "snr",
    "ssim",
    "step_sequence",
    "voxelize_object",
]
