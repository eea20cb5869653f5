//! Multiply-accumulate accounting.
//!
//! Conv MACs follow the textbook formulas; gather/scatter traffic is tracked
//! separately as bytes moved, and information-gain work is counted as
//! elementwise operations, never MACs.

use serde::Serialize;

/// Per-frame compute counters, split by component.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct MacCounter {
    /// Task-network convolution MACs.
    pub task: u64,
    /// Policy-network convolution MACs.
    pub policy: u64,
    /// Information-gain elementwise operations.
    pub info_gain: u64,
    /// Bytes moved by gather/scatter block copies.
    pub copy_bytes: u64,
}

impl MacCounter {
    pub fn reset(&mut self) {
        *self = MacCounter::default();
    }
}

/// Which sub-counter a network execution charges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacComponent {
    Task,
    Policy,
}

impl MacCounter {
    pub fn add_conv(&mut self, component: MacComponent, macs: u64) {
        match component {
            MacComponent::Task => self.task += macs,
            MacComponent::Policy => self.policy += macs,
        }
    }
}

/// Dense conv cost: Kh*Kw*Cin*Cout*Hout*Wout.
pub fn conv_macs_dense(kh: usize, kw: usize, cin: usize, cout: usize, oh: usize, ow: usize) -> u64 {
    (kh * kw * cin * cout) as u64 * (oh * ow) as u64
}

/// Sparse conv cost: Kh*Kw*Cin*Cout*bs_out^2*n_exec.
pub fn conv_macs_sparse(
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    bs_out: usize,
    n_exec: usize,
) -> u64 {
    (kh * kw * cin * cout) as u64 * (bs_out * bs_out) as u64 * n_exec as u64
}
