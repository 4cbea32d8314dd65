pub mod allocate;
pub mod bench;
pub mod quantize;
pub mod synth;
pub mod verify;
