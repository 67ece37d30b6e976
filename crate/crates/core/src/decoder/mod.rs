//! Downstream predictor: linear CTC head, CTC loss, greedy decoding, WER.

mod ctc;
mod greedy;
mod head;
mod wer;

pub use ctc::{ctc_loss, forward_backward, log_likelihood, required_frames, CtcOutput};
pub use greedy::greedy_decode;
pub use head::{DecoderHead, HeadVars};
pub use wer::{edit_distance, wer, WerTally};
