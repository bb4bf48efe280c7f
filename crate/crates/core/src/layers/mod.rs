//! Building blocks of the labelers: LSTM cells, bidirectional LSTMs, additive
//! and multi-head self-attention, and time-distributed dense layers.

mod attention;
mod dense;
mod lstm;

pub(crate) use attention::divisors;
pub use attention::{
    additive_self_attention, choose_heads, multi_head_self_attention, AdditiveAttention,
    AdditiveCache, MultiHeadAttention, MultiHeadCache, DEFAULT_ATTENTION_DIM, MASK_PENALTY,
};
pub use dense::{dense_softmax, Dense, DenseSoftmax, DenseSoftmaxCache};
pub use lstm::{
    backprop_direction, bilstm_forward, lstm_cell_step, run_direction, BiLstm, BiLstmCache,
    Direction, DirectionCache, LstmCell,
};
