use rand_distr::{Distribution, StandardNormal};

use super::linalg::{Matrix, Real};
use super::ModelConfig;
use crate::error::Result;
use crate::rng::{rng_from_seed, SpearRng};

/// Token embedding table, one row per quantization bin.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    pub table: Matrix<T>,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftPromptBank<T> {
    pub prompts: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub ln1_gain: Vec<T>,
    pub ln1_bias: Vec<T>,
    pub wq: Matrix<T>,
    pub bq: Vec<T>,
    pub wk: Matrix<T>,
    pub bk: Vec<T>,
    pub wv: Matrix<T>,
    pub bv: Vec<T>,
    pub wo: Matrix<T>,
    pub bo: Vec<T>,
    pub ln2_gain: Vec<T>,
    pub ln2_bias: Vec<T>,
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

/// Encoder weights plus sinusoidal position table; never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder<T> {
    pub layers: Vec<EncoderLayer<T>>,
    pub positions: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub weight: Vec<T>,
    pub bias: T,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpearModel<T> {
    pub config: ModelConfig,
    pub embedding: EmbeddingMatrix<T>,
    pub prompts: SoftPromptBank<T>,
    pub encoder: FrozenEncoder<T>,
    pub head: ClassifierHead<T>,
}

struct Init {
    rng: SpearRng,
}

impl Init {
    fn gaussian<T: Real>(&mut self, n: usize, std: f64) -> Vec<T> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::of(z * std)
            })
            .collect()
    }

    fn matrix<T: Real>(&mut self, rows: usize, cols: usize, std: f64) -> Matrix<T> {
        Matrix::from_vec(rows, cols, self.gaussian(rows * cols, std))
    }
}

/// Sinusoidal encodings: sin on even columns, cos on odd ones.
pub(crate) fn sinusoidal_positions<T: Real>(len: usize, d: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(len, d);
    for pos in 0..len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            m.data[pos * d + 2 * i] = T::of(angle.sin());
            m.data[pos * d + 2 * i + 1] = T::of(angle.cos());
        }
    }
    m
}

fn layer<T: Real>(init: &mut Init, d: usize, d_ff: usize, std: f64) -> EncoderLayer<T> {
    let ones = vec![T::one(); d];
    let zeros = vec![T::zero(); d];
    EncoderLayer {
        ln1_gain: ones.clone(),
        ln1_bias: zeros.clone(),
        wq: init.matrix(d, d, std),
        bq: vec![T::zero(); d],
        wk: init.matrix(d, d, std),
        bk: vec![T::zero(); d],
        wv: init.matrix(d, d, std),
        bv: vec![T::zero(); d],
        wo: init.matrix(d, d, std),
        bo: vec![T::zero(); d],
        ln2_gain: ones,
        ln2_bias: zeros,
        w1: init.matrix(d, d_ff, std),
        b1: vec![T::zero(); d_ff],
        w2: init.matrix(d_ff, d, std),
        b2: vec![T::zero(); d],
    }
}

/// Draws every parameter from the config seed. Values are sampled in `f64`
/// and cast, so `f32` and `f64` models from one seed agree up to rounding.
pub fn init_model<T: Real>(config: &ModelConfig) -> Result<SpearModel<T>> {
    config.validate()?;
    let d = config.d_model;
    let mut init = Init {
        rng: rng_from_seed(config.seed),
    };
    let embedding = EmbeddingMatrix {
        table: init.matrix(config.n_bins as usize, d, config.embed_std),
        frozen: !config.trainable_embeddings,
    };
    let prompts = SoftPromptBank {
        prompts: init.matrix(config.prompt_len, d, config.init_std),
    };
    let layers = (0..config.n_layers)
        .map(|_| layer(&mut init, d, config.d_ff, config.init_std))
        .collect();
    let head = ClassifierHead {
        weight: init.gaussian(d, config.init_std),
        bias: T::zero(),
        trainable: true,
    };
    Ok(SpearModel {
        config: config.clone(),
        embedding,
        prompts,
        encoder: FrozenEncoder {
            layers,
            positions: sinusoidal_positions(config.max_seq_len, d),
        },
        head,
    })
}

/// A named view of one parameter tensor.
pub(crate) struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

fn tensor<'a, T>(name: String, shape: Vec<usize>, data: &'a [T]) -> TensorRef<'a, T> {
    TensorRef { name, shape, data }
}

fn mat_ref<'a, T>(prefix: &str, name: &str, m: &'a Matrix<T>) -> TensorRef<'a, T> {
    tensor(format!("{prefix}.{name}"), vec![m.rows, m.cols], &m.data)
}

fn vec_ref<'a, T>(prefix: &str, name: &str, v: &'a [T]) -> TensorRef<'a, T> {
    tensor(format!("{prefix}.{name}"), vec![v.len()], v)
}

impl<T: Real> EncoderLayer<T> {
    fn tensors(&self, prefix: &str) -> Vec<TensorRef<'_, T>> {
        vec![
            vec_ref(prefix, "ln1_gain", &self.ln1_gain),
            vec_ref(prefix, "ln1_bias", &self.ln1_bias),
            mat_ref(prefix, "wq", &self.wq),
            vec_ref(prefix, "bq", &self.bq),
            mat_ref(prefix, "wk", &self.wk),
            vec_ref(prefix, "bk", &self.bk),
            mat_ref(prefix, "wv", &self.wv),
            vec_ref(prefix, "bv", &self.bv),
            mat_ref(prefix, "wo", &self.wo),
            vec_ref(prefix, "bo", &self.bo),
            vec_ref(prefix, "ln2_gain", &self.ln2_gain),
            vec_ref(prefix, "ln2_bias", &self.ln2_bias),
            mat_ref(prefix, "w1", &self.w1),
            vec_ref(prefix, "b1", &self.b1),
            mat_ref(prefix, "w2", &self.w2),
            vec_ref(prefix, "b2", &self.b2),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq.data,
            &mut self.bq,
            &mut self.wk.data,
            &mut self.bk,
            &mut self.wv.data,
            &mut self.bv,
            &mut self.wo.data,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ]
    }
}

fn crc_of<T: Real>(data: &[T]) -> u32 {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for &v in data {
        v.extend_le_bytes(&mut bytes);
    }
    crc32fast::hash(&bytes)
}

impl<T: Real> SpearModel<T> {
    fn embedding_tensor(&self) -> TensorRef<'_, T> {
        tensor(
            "embedding".into(),
            vec![self.embedding.table.rows, self.embedding.table.cols],
            &self.embedding.table.data[..],
        )
    }

    /// The embedding table (unless it is trainable) and every encoder
    /// tensor, in declaration order.
    pub(crate) fn frozen_tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        if self.embedding.frozen {
            out.push(self.embedding_tensor());
        }
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.extend(l.tensors(&format!("encoder.{i}")));
        }
        out
    }

    /// Prompts, head, and the embedding table when it is trainable.
    pub(crate) fn trainable_tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = vec![
            tensor(
                "prompts".into(),
                vec![self.prompts.prompts.rows, self.prompts.prompts.cols],
                &self.prompts.prompts.data[..],
            ),
            tensor("head.weight".into(), vec![self.head.weight.len()], &self.head.weight[..]),
            tensor("head.bias".into(), vec![1], std::slice::from_ref(&self.head.bias)),
        ];
        if !self.embedding.frozen {
            out.push(self.embedding_tensor());
        }
        out
    }

    /// Per-tensor CRC32 of the embedding table and every encoder tensor.
    pub fn frozen_checksums(&self) -> Vec<(String, u32)> {
        self.frozen_tensors()
            .into_iter()
            .map(|t| (t.name, crc_of(t.data)))
            .collect()
    }

    /// One CRC over all frozen tensors.
    pub fn frozen_checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for t in self.frozen_tensors() {
            hasher.update(t.name.as_bytes());
            hasher.update(&crc_of(t.data).to_le_bytes());
        }
        hasher.finalize()
    }

    /// CRC over every parameter, frozen and trainable.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for t in self.frozen_tensors().into_iter().chain(self.trainable_tensors()) {
            hasher.update(t.name.as_bytes());
            hasher.update(&crc_of(t.data).to_le_bytes());
        }
        hasher.finalize()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.trainable_tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> SpearModel<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::of(a.as_f64())).collect::<Vec<U>>();
        SpearModel {
            config: self.config.clone(),
            embedding: EmbeddingMatrix {
                table: self.embedding.table.cast(),
                frozen: self.embedding.frozen,
            },
            prompts: SoftPromptBank {
                prompts: self.prompts.prompts.cast(),
            },
            encoder: FrozenEncoder {
                layers: self
                    .encoder
                    .layers
                    .iter()
                    .map(|l| EncoderLayer {
                        ln1_gain: v(&l.ln1_gain),
                        ln1_bias: v(&l.ln1_bias),
                        wq: l.wq.cast(),
                        bq: v(&l.bq),
                        wk: l.wk.cast(),
                        bk: v(&l.bk),
                        wv: l.wv.cast(),
                        bv: v(&l.bv),
                        wo: l.wo.cast(),
                        bo: v(&l.bo),
                        ln2_gain: v(&l.ln2_gain),
                        ln2_bias: v(&l.ln2_bias),
                        w1: l.w1.cast(),
                        b1: v(&l.b1),
                        w2: l.w2.cast(),
                        b2: v(&l.b2),
                    })
                    .collect(),
                positions: self.encoder.positions.cast(),
            },
            head: ClassifierHead {
                weight: v(&self.head.weight),
                bias: U::of(self.head.bias.as_f64()),
                trainable: self.head.trainable,
            },
        }
    }
}
