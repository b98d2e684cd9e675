//! Learned inter-frame video codec: multiscale motion-aware estimation, hyperprior
//! motion coding, deformable compensation and channel-grouped contextual entropy coding.

pub mod autoencoder;
pub mod blocks;
pub mod config;
pub mod contextual;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod intra;
pub mod metrics;
pub mod model;
pub mod motion_codec;
pub mod motion_comp;
pub mod ms_mam;
pub mod pipeline;
pub mod training;
pub mod video_io;

pub use config::{CodecConfig, DistortionMetric, QuantSurrogate};
pub use error::{Error, Result};
pub use model::{load_checkpoint, save_checkpoint, CodecModel};
pub use pipeline::{BitstreamContainer, Codec};
pub use video_io::{Frame, FrameType, GopSchedule, RawSequence};
