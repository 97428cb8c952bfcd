//! Dense arrays with a reverse-mode tape.
//!
//! Feature maps use a channel-major batch layout `[C, N, T, V]` so that
//! point-wise convolutions, graph mixing and batch statistics each reduce to
//! a single contiguous GEMM or per-channel slice.

mod gradcheck;
mod init;
mod kernels;
mod params;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use ndarray::{ArrayD, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::distr::uniform::SampleUniform;

pub use gradcheck::{grad_check, ClosureModel, GradCheckOptions, GradCheckReport, GradCheckable, ParamCheck};
pub use init::{fan_uniform, uniform_bound};
pub use params::{Buffer, BufferId, ParamId, ParamKind, ParamStore, Parameter};
pub use tape::{Activation, BatchStats, Graph, Var};

/// Dense row-major array; the value type every operation consumes and produces.
pub type Tensor<F> = ArrayD<F>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(crate::Error::arg(format!("unknown dtype `{other}`"))),
        }
    }
}

/// Scalar types the engine runs on.
pub trait Element:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + SampleUniform
    + AddAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to element type")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("element converts to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
