mod data;
mod eval;
mod sim;
mod train;

pub use data::gen_data;
pub use eval::{eval, EVAL_CSV};
pub use sim::{rollout, serve};
pub use train::{encode, train_ae, train_rnn};
