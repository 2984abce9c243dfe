//! Synthetic shape generation, contamination, pairing, and point cloud
//! file I/O.

mod contaminate;
mod io;
mod manifest;
mod shapes;

pub use contaminate::{contaminate, ContaminationSpec, PairedCloud, SurfaceRef};
pub use io::{read_cloud, write_cloud, CloudFormat};
pub use manifest::{read_manifest, write_manifest, DatasetManifest, ManifestEntry};
pub use shapes::{closest_point_on_triangle, generate_shape, Shape, ShapeKind};
