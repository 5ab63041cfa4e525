//! Desk-scale analyses: triple/answer proximity, similarity-vs-k curves,
//! node-cap ablation and the with/without-knowledge contrast.

mod contrast;
mod curve;
mod planted;
mod proximity;

pub use contrast::{knowledge_contrast, node_cap_ablation, option_chance, ContrastReport, ContrastRow, Experiment};
pub use curve::{similarity_curve, AblationCurve, CurvePoint};
pub use planted::{PlantedTask, PlantedWorld};
pub use proximity::{mean_std, proximity, ProximityReport};
