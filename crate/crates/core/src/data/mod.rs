//! Signal ingestion, windowing, labels, normalization and synthetic subjects.

pub mod interchange;
pub mod labels;
pub mod modality;
pub mod normalize;
pub mod prepare;
pub mod recording;
pub mod segment;
pub mod split;
pub mod synth;

pub use interchange::{load_recording, roundtrip_check, save_recording, subject_dirs, validate_manifest, Manifest, ValidationReport};
pub use labels::{attach_labels, quantize_label, LabelAssignment};
pub use modality::{Modality, QuestionId};
pub use normalize::{apply_normalization, fit_normalization, NormalizationStats};
pub use prepare::{prepare_subject, AccInput, PreparedSubject};
pub use recording::{LabelEvent, SubjectRecording};
pub use segment::{segment, SegmentationSpec, WindowDataset, WindowEntry, WindowLabels};
pub use split::train_test_split;
pub use synth::{generate_synthetic, generate_synthetic_with, SynthConfig};
