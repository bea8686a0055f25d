//! Network building blocks shared by the agent, mixer and classifier networks.

pub mod checkpoint;
mod gru;
mod layers;
mod recurrent;

pub use checkpoint::{load_params, save_params};
pub use gru::{GruCell, GruCellSpec};
pub use layers::{Activation, Linear, Mlp, MlpSpec};
pub use recurrent::RecurrentNet;
