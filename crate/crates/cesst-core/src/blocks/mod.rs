//! Composite network blocks: SSAB, FEB, channel learning / SFAM, RCAB, SCCM,
//! and the baseline residual conv block.

mod feb;
mod layers;
mod rcab;
mod sccm;
mod sfam;
mod ssab;

pub use feb::{Block, BlockKind, BlockSettings, Feb, FebConfig};
pub use layers::{ChannelNorm, Conv2dLayer, FeedForward};
pub use rcab::Rcab;
pub use sccm::{Sccm, SccmOutput};
pub use sfam::{ChannelLearning, FusionTriple, Sfam, SFAM_BRANCHES};
pub use ssab::{MsaKind, ResnetBlock, Ssab, SsabConfig};
