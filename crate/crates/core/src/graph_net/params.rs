//! Model parameters: MLP weights for the encode-process-decode stack plus
//! feature/target normalization statistics, and their binary checkpoint
//! format (magic "GNNP").

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autodiff::{Tape, Tensor};
use crate::training::NormalizerStats;

const GNNP_MAGIC: &[u8; 4] = b"GNNP";
const GNNP_VERSION: u32 = 1;

/// A fully-connected stack: tanh after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    /// Row-major `[d_in, d_out]` weight matrices.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (d_in, d_out) = (pair[0], pair[1]);
            let limit = (6.0 / (d_in + d_out) as f64).sqrt();
            weights.push(
                (0..d_in * d_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; d_out]);
        }
        Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    fn arrays(&self) -> Vec<(&Vec<f64>, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, pair) in self.dims.windows(2).enumerate() {
            out.push((&self.weights[i], vec![pair[0], pair[1]]));
            out.push((&self.biases[i], vec![1, pair[1]]));
        }
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Tape-staged MLP.
pub struct MlpTensors {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpTensors {
    pub fn apply(&self, tape: &Tape, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let rows = h.shape()[0];
            let lin = tape.add(&tape.matmul(&h, w), &tape.broadcast_rows(b, rows));
            h = if i < last { tape.tanh(&lin) } else { lin };
        }
        h
    }
}

/// All learned state of the simulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub normalizer: NormalizerStats,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    /// Per message-passing block: (edge update f_e, node update f_n).
    pub blocks: Vec<(Mlp, Mlp)>,
    pub decoder: Mlp,
}

impl ModelParams {
    /// Seeded initialization with an identity normalizer.
    pub fn init(config: &ModelConfig, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let depth = config.mlp_hidden_layers;
        let dims = |d_in: usize, d_out: usize| -> Vec<usize> {
            let mut v = vec![d_in];
            v.extend(std::iter::repeat_n(h, depth));
            v.push(d_out);
            v
        };
        let d_node = config.node_feature_dim();
        let d_edge = ModelConfig::EDGE_FEATURE_DIM;
        let node_encoder = Mlp::init(&dims(d_node, h), &mut rng);
        let edge_encoder = Mlp::init(&dims(d_edge, h), &mut rng);
        let blocks = (0..config.num_blocks)
            .map(|_| {
                (
                    Mlp::init(&dims(3 * h, h), &mut rng),
                    Mlp::init(&dims(2 * h, h), &mut rng),
                )
            })
            .collect();
        let decoder = Mlp::init(&dims(h, 3), &mut rng);
        ModelParams {
            normalizer: NormalizerStats::identity(d_node, d_edge),
            config: config.clone(),
            node_encoder,
            edge_encoder,
            blocks,
            decoder,
        }
    }

    /// All weight arrays in the declared checkpoint order.
    pub fn arrays(&self) -> Vec<(&Vec<f64>, Vec<usize>)> {
        let n = &self.normalizer;
        let mut out: Vec<(&Vec<f64>, Vec<usize>)> = vec![
            (&n.node_mean, vec![1, n.node_mean.len()]),
            (&n.node_std, vec![1, n.node_std.len()]),
            (&n.edge_mean, vec![1, n.edge_mean.len()]),
            (&n.edge_std, vec![1, n.edge_std.len()]),
            (&n.accel_mean, vec![1, n.accel_mean.len()]),
            (&n.accel_std, vec![1, n.accel_std.len()]),
        ];
        out.extend(self.node_encoder.arrays());
        out.extend(self.edge_encoder.arrays());
        for (fe, fn_) in &self.blocks {
            out.extend(fe.arrays());
            out.extend(fn_.arrays());
        }
        out.extend(self.decoder.arrays());
        out
    }

    /// Mutable views of the trainable arrays (everything except the
    /// normalizer), in the same relative order as [`Self::stage`] leaves.
    pub fn trainable_arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        out.extend(self.node_encoder.arrays_mut());
        out.extend(self.edge_encoder.arrays_mut());
        for (fe, fn_) in &mut self.blocks {
            out.extend(fe.arrays_mut());
            out.extend(fn_.arrays_mut());
        }
        out.extend(self.decoder.arrays_mut());
        out
    }

    pub fn n_trainable(&self) -> usize {
        let mlp = |m: &Mlp| -> usize {
            m.weights.iter().map(Vec::len).sum::<usize>() + m.biases.iter().map(Vec::len).sum::<usize>()
        };
        mlp(&self.node_encoder)
            + mlp(&self.edge_encoder)
            + self.blocks.iter().map(|(a, b)| mlp(a) + mlp(b)).sum::<usize>()
            + mlp(&self.decoder)
    }

    /// Puts the weights on a tape. With `trainable` they become leaves whose
    /// gradients can be fetched after backward, in [`StagedParams::leaves`]
    /// order (matching [`Self::trainable_arrays_mut`]).
    pub fn stage(&self, tape: &Tape, trainable: bool) -> StagedParams {
        let mut leaves = Vec::new();
        let mut stage_mlp = |m: &Mlp| -> MlpTensors {
            let mut layers = Vec::new();
            for (i, pair) in m.dims.windows(2).enumerate() {
                let mut make = |data: &Vec<f64>, shape: &[usize]| -> Tensor {
                    if trainable {
                        let t = tape.leaf(data.clone(), shape);
                        leaves.push(t.clone());
                        t
                    } else {
                        Tensor::constant(data.clone(), shape)
                    }
                };
                let w = make(&m.weights[i], &[pair[0], pair[1]]);
                let b = make(&m.biases[i], &[1, pair[1]]);
                layers.push((w, b));
            }
            MlpTensors { layers }
        };
        let node_encoder = stage_mlp(&self.node_encoder);
        let edge_encoder = stage_mlp(&self.edge_encoder);
        let blocks: Vec<(MlpTensors, MlpTensors)> = self
            .blocks
            .iter()
            .map(|(fe, fn_)| (stage_mlp(fe), stage_mlp(fn_)))
            .collect();
        let decoder = stage_mlp(&self.decoder);

        let n = &self.normalizer;
        let row = |v: &[f64]| Tensor::constant(v.to_vec(), &[1, v.len()]);
        let inv = |v: &[f64]| {
            Tensor::constant(v.iter().map(|s| 1.0 / s).collect(), &[1, v.len()])
        };
        StagedParams {
            node_encoder,
            edge_encoder,
            blocks,
            decoder,
            node_mean: row(&n.node_mean),
            node_inv_std: inv(&n.node_std),
            edge_mean: row(&n.edge_mean),
            edge_inv_std: inv(&n.edge_std),
            accel_mean: row(&n.accel_mean),
            accel_std: row(&n.accel_std),
            accel_inv_std: inv(&n.accel_std),
            leaves,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(GNNP_MAGIC)?;
        w.write_all(&GNNP_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config).map_err(io::Error::other)?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        let arrays = self.arrays();
        w.write_all(&(arrays.len() as u32).to_le_bytes())?;
        for (data, shape) in arrays {
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for d in &shape {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<ModelParams> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GNNP_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad GNNP magic"));
        }
        let version = read_u32(r)?;
        if version != GNNP_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported GNNP version {version}"),
            ));
        }
        let cfg_len = read_u32(r)? as usize;
        let mut cfg_buf = vec![0u8; cfg_len];
        r.read_exact(&mut cfg_buf)?;
        let config: ModelConfig = serde_json::from_slice(&cfg_buf)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;

        let mut params = ModelParams::init(&config, 0);
        let n_arrays = read_u32(r)? as usize;
        let expected: Vec<Vec<usize>> = params.arrays().iter().map(|(_, s)| s.clone()).collect();
        if n_arrays != expected.len() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("expected {} arrays, file has {n_arrays}", expected.len()),
            ));
        }
        let mut loaded: Vec<Vec<f64>> = Vec::with_capacity(n_arrays);
        for shape in &expected {
            let ndim = read_u32(r)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(read_u32(r)? as usize);
            }
            if dims != *shape {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("array shape {dims:?} does not match config ({shape:?})"),
                ));
            }
            let len: usize = dims.iter().product();
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf)?;
            loaded.push(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        let mut it = loaded.into_iter();
        let n = &mut params.normalizer;
        n.node_mean = it.next().unwrap();
        n.node_std = it.next().unwrap();
        n.edge_mean = it.next().unwrap();
        n.edge_std = it.next().unwrap();
        n.accel_mean = it.next().unwrap();
        n.accel_std = it.next().unwrap();
        for slot in params.trainable_arrays_mut() {
            *slot = it.next().unwrap();
        }
        Ok(params)
    }
}

/// Tape-resident weights and normalizer constants.
pub struct StagedParams {
    pub node_encoder: MlpTensors,
    pub edge_encoder: MlpTensors,
    pub blocks: Vec<(MlpTensors, MlpTensors)>,
    pub decoder: MlpTensors,
    pub node_mean: Tensor,
    pub node_inv_std: Tensor,
    pub edge_mean: Tensor,
    pub edge_inv_std: Tensor,
    pub accel_mean: Tensor,
    pub accel_std: Tensor,
    pub accel_inv_std: Tensor,
    /// Trainable leaves in [`ModelParams::trainable_arrays_mut`] order.
    pub leaves: Vec<Tensor>,
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_net::Variant;

    #[test]
    fn init_is_seeded_and_checkpoint_roundtrips() {
        let cfg = ModelConfig::desk_default(0.08, Variant::SdfFeatures);
        let a = ModelParams::init(&cfg, 3);
        let b = ModelParams::init(&cfg, 3);
        assert_eq!(a, b);
        let c = ModelParams::init(&cfg, 4);
        assert_ne!(a, c);

        let mut bytes = Vec::new();
        a.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"GNNP");
        let back = ModelParams::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn staged_leaf_order_matches_trainable_arrays() {
        let cfg = ModelConfig::desk_default(0.08, Variant::SdfFeatures);
        let mut params = ModelParams::init(&cfg, 1);
        let tape = Tape::new();
        let staged = params.stage(&tape, true);
        let arrays = params.trainable_arrays_mut();
        assert_eq!(staged.leaves.len(), arrays.len());
        for (leaf, arr) in staged.leaves.iter().zip(arrays) {
            assert_eq!(leaf.data(), arr.as_slice());
        }
    }
}
