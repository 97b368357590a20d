use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, Head, Mlp, NetworkParams};
use crate::container;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layer_shapes: Vec<[usize; 2]>,
    twin_shapes: Option<Vec<[usize; 2]>>,
    omega0: f64,
    head: Head,
    seed: u64,
}

fn shapes(mlp: &Mlp) -> Vec<[usize; 2]> {
    mlp.layers.iter().map(|l| [l.outputs(), l.inputs()]).collect()
}

/// Writes parameters as a JSON header followed by the flat `f64` stream
/// (weights row-major, then bias, layer by layer; twin network last).
pub fn write_checkpoint(params: &NetworkParams, w: impl Write) -> Result<()> {
    let header = CheckpointHeader {
        layer_shapes: shapes(&params.net),
        twin_shapes: params.twin.as_ref().map(shapes),
        omega0: params.omega0,
        head: params.head,
        seed: params.seed,
    };
    let payload: Vec<f64> = params.tensors().flatten().copied().collect();
    container::write(w, "checkpoint", &header, &payload)
}

fn rebuild(shapes: &[[usize; 2]], values: &mut impl Iterator<Item = f64>) -> Result<Mlp> {
    let mut layers = Vec::with_capacity(shapes.len());
    for &[out, inp] in shapes {
        let w: Vec<f64> = values.by_ref().take(out * inp).collect();
        let b: Vec<f64> = values.by_ref().take(out).collect();
        if w.len() != out * inp || b.len() != out {
            return Err(Error::Format("checkpoint payload too short".into()));
        }
        layers.push(Dense {
            weight: Array2::from_shape_vec((out, inp), w).expect("length checked"),
            bias: Array1::from_vec(b),
        });
    }
    Ok(Mlp { layers })
}

pub fn read_checkpoint(r: impl Read) -> Result<NetworkParams> {
    let (header, payload): (CheckpointHeader, Vec<f64>) = container::read(r, "checkpoint")?;
    let mut values = payload.into_iter();
    let net = rebuild(&header.layer_shapes, &mut values)?;
    let twin = header
        .twin_shapes
        .as_deref()
        .map(|s| rebuild(s, &mut values))
        .transpose()?;
    if values.next().is_some() {
        return Err(Error::Format("checkpoint payload has trailing values".into()));
    }
    let params = NetworkParams {
        net,
        twin,
        omega0: header.omega0,
        head: header.head,
        seed: header.seed,
    };
    params.validate()?;
    Ok(params)
}
