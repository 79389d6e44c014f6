//! Scene generation, parametric scattering and DVS event synthesis.

mod dataset;
mod dvs;
mod events;
mod glyph;
mod image;
mod scatter;
mod scene;

pub use dataset::{
    build_dataset, generate_sample, load_glyph_dir, place_glyph, read_jsonl, read_manifest,
    read_trajectory, write_jsonl, GlyphSource, ManifestEntry, Sample, SceneMode, SimConfig,
    TrajectoryRecord, MANIFEST_FILE,
};
pub use dvs::{frames_to_events, DvsConfig};
pub use events::{Edge, Event, EventStream, Trigger, EVS_MAGIC, EVS_VERSION};
pub use glyph::{procedural_glyph, GLYPH_CLASSES};
pub use image::GrayImage;
pub use scatter::{gaussian_blur, gaussian_kernel, scatter_forward, specular_map, ScatteringConfig};
pub use scene::{blink_envelope, generate_trajectory, glyph_origin, render_scene, Trajectory, TrajectoryMode};
