//! Dense layers with hand-written backward passes, AdaDelta, gradient
//! clipping and the checkpoint format.

pub mod attention;
pub mod checkpoint;
pub mod lstm;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use attention::{AttentionCache, AttentionEncGrads, AttentionKeys, LocationAttention};
pub use lstm::{Blstm, BlstmCache, LstmCache, LstmCell};
pub use ops::{cross_entropy, embed, embed_backward, linear, linear_backward, log_softmax, softmax, Embedding, Linear};
pub use optim::{clip_grad_norm, grad_norm, AdaDeltaState};
pub use tensor::{Grads, Init, ParamId, ParamSet, Tensor};
