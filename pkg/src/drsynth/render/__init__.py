"""Scene compilation, the two render backends, and tone mapping."""

from .pathtracer import primary_visibility_ids, render_pathtraced
from .raster import render_id_pass, render_rasterized, visibility_buffer
from .scene import RenderScene, RenderSettings, box_meshes, camera_frame, compile_scene, scene_from_layout
from .tonemap import tone_map

__all__ = [
    "RenderScene", "RenderSettings", "box_meshes", "camera_frame", "compile_scene", "scene_from_layout",
    "primary_visibility_ids", "render_pathtraced", "render_rasterized", "render_id_pass", "visibility_buffer", "tone_map", "render",
]


def render(scene: RenderScene, camera, settings: RenderSettings = RenderSettings(), width=None, height=None):
    """Linear image from the backend named in ``settings``; returns (image, clamped sample count)."""
    if settings.backend == "rasterized":
        return render_rasterized(scene, camera, settings, width, height), 0
    return render_pathtraced(scene, camera, settings, width, height)
