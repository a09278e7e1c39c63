use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Result, SidenetError};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank {
    pub width: usize,
    /// `[channels x width x embedding_dim]`
    pub kernels: Tensor,
    /// `[channels]`
    pub bias: Tensor,
}

/// Packed LSTM weights, gate blocks ordered forget, input, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[4H x (H + input)]`, applied to `[h_prev; x]`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `[vocab x embedding_dim]`
    pub embedding: Tensor,
    pub conv: Vec<ConvBank>,
    pub doc_lstm: LstmParams,
    pub ext_lstm: LstmParams,
    /// `[sentence_dim x lstm_size]`, maps an extractor state onto side rows.
    pub attention: Tensor,
    /// `[output_hidden x lstm_size]`
    pub v_h: Tensor,
    /// `[output_hidden x sentence_dim]`, applied to the attended side context.
    pub w_side: Tensor,
    /// `[2 x output_hidden]`
    pub u_o: Tensor,
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig, vocab_size: usize) -> Self {
        let d = config.embedding_dim;
        let s = config.sentence_dim();
        let h = config.lstm_size;
        let g = config.output_hidden;
        let c = config.channels_per_width;
        let lstm = || LstmParams {
            weight: Tensor::zeros(&[4 * h, h + s]),
            bias: Tensor::zeros(&[4 * h]),
        };
        Self {
            embedding: Tensor::zeros(&[vocab_size, d]),
            conv: config
                .kernel_widths
                .iter()
                .map(|&w| ConvBank {
                    width: w,
                    kernels: Tensor::zeros(&[c, w, d]),
                    bias: Tensor::zeros(&[c]),
                })
                .collect(),
            doc_lstm: lstm(),
            ext_lstm: lstm(),
            attention: Tensor::zeros(&[s, h]),
            v_h: Tensor::zeros(&[g, h]),
            w_side: Tensor::zeros(&[g, s]),
            u_o: Tensor::zeros(&[2, g]),
        }
    }

    /// Named tensors in their canonical order, embedding first.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for bank in &self.conv {
            out.push((format!("conv.w{}.kernels", bank.width), &bank.kernels));
            out.push((format!("conv.w{}.bias", bank.width), &bank.bias));
        }
        out.extend([
            ("doc_lstm.weight".to_string(), &self.doc_lstm.weight),
            ("doc_lstm.bias".to_string(), &self.doc_lstm.bias),
            ("ext_lstm.weight".to_string(), &self.ext_lstm.weight),
            ("ext_lstm.bias".to_string(), &self.ext_lstm.bias),
            ("attention.proj".to_string(), &self.attention),
            ("output.v_h".to_string(), &self.v_h),
            ("output.w_side".to_string(), &self.w_side),
            ("output.u_o".to_string(), &self.u_o),
        ]);
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for bank in &mut self.conv {
            out.push(&mut bank.kernels);
            out.push(&mut bank.bias);
        }
        out.extend([
            &mut self.doc_lstm.weight,
            &mut self.doc_lstm.bias,
            &mut self.ext_lstm.weight,
            &mut self.ext_lstm.bias,
            &mut self.attention,
            &mut self.v_h,
            &mut self.w_side,
            &mut self.u_o,
        ]);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

fn xavier(rng: &mut ChaCha8Rng, t: &mut Tensor, fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in t.data_mut() {
        *x = rng.gen_range(-limit..=limit);
    }
}

/// Seeded initialization.
///
/// Weight matrices and kernels are drawn uniformly from
/// `±sqrt(6 / (fan_in + fan_out))`, biases start at zero except the LSTM
/// forget gates (one), and the embedding table is copied from `pretrained`
/// when given and left at zero otherwise.
pub fn init_params(
    config: &ModelConfig,
    vocab_size: usize,
    pretrained: Option<&Tensor>,
) -> Result<ModelParams> {
    config.validate()?;
    let mut p = ModelParams::zeros(config, vocab_size);
    if let Some(table) = pretrained {
        if table.shape() != p.embedding.shape() {
            return Err(SidenetError::Config(format!(
                "pretrained embeddings have shape {:?}, expected {:?}",
                table.shape(),
                p.embedding.shape()
            )));
        }
        p.embedding = table.clone();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.embedding_dim;
    let c = config.channels_per_width;
    for bank in &mut p.conv {
        xavier(&mut rng, &mut bank.kernels, bank.width * d, c);
    }
    let h = config.lstm_size;
    for lstm in [&mut p.doc_lstm, &mut p.ext_lstm] {
        let (rows, cols) = (lstm.weight.shape()[0], lstm.weight.shape()[1]);
        xavier(&mut rng, &mut lstm.weight, cols, rows);
        lstm.bias.data_mut()[..h].fill(1.0);
    }
    for m in [&mut p.attention, &mut p.v_h, &mut p.w_side, &mut p.u_o] {
        let (rows, cols) = (m.shape()[0], m.shape()[1]);
        xavier(&mut rng, m, cols, rows);
    }
    Ok(p)
}

/// Gradients shaped like [`ModelParams`], with the embedding table held as
/// sparse rows since a document touches only a handful of words.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub embedding_rows: BTreeMap<u32, Vec<f64>>,
    /// Aligned with [`ModelParams::named`] minus the leading embedding.
    pub dense: Vec<Tensor>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            embedding_rows: BTreeMap::new(),
            dense: params.tensors()[1..]
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) -> Result<()> {
        for (id, row) in &other.embedding_rows {
            match self.embedding_rows.get_mut(id) {
                Some(existing) => {
                    for (a, b) in existing.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                None => {
                    self.embedding_rows.insert(*id, row.clone());
                }
            }
        }
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.embedding_rows.values_mut() {
            for x in row {
                *x *= factor;
            }
        }
        for t in &mut self.dense {
            t.scale(factor);
        }
    }

    /// Full gradient list aligned with [`ModelParams::named`].
    pub fn to_dense(&self, params: &ModelParams) -> Vec<Tensor> {
        let mut embedding = Tensor::zeros(params.embedding.shape());
        for (&id, row) in &self.embedding_rows {
            embedding.row_mut(id as usize).copy_from_slice(row);
        }
        std::iter::once(embedding)
            .chain(self.dense.iter().cloned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embedding_dim: 3,
            kernel_widths: vec![1, 2],
            channels_per_width: 2,
            lstm_size: 4,
            output_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = init_params(&tiny(), 10, None).unwrap();
        let b = init_params(&tiny(), 10, None).unwrap();
        assert_eq!(a, b);
        let mut other = tiny();
        other.seed = 7;
        assert_ne!(a, init_params(&other, 10, None).unwrap());
    }

    #[test]
    fn embeddings_zero_or_pretrained() {
        let a = init_params(&tiny(), 10, None).unwrap();
        assert!(a.embedding.data().iter().all(|&x| x == 0.0));
        let mut table = Tensor::zeros(&[10, 3]);
        table.row_mut(4).copy_from_slice(&[0.1, 0.2, 0.3]);
        let b = init_params(&tiny(), 10, Some(&table)).unwrap();
        assert_eq!(b.embedding.row(4), &[0.1, 0.2, 0.3]);
        assert_eq!(b.embedding.row(1), &[0.0, 0.0, 0.0]);
        assert!(init_params(&tiny(), 11, Some(&table)).is_err());
    }

    #[test]
    fn forget_gate_bias_is_one_and_weights_bounded() {
        let c = tiny();
        let p = init_params(&c, 10, None).unwrap();
        let b = p.doc_lstm.bias.data();
        assert!(b[..4].iter().all(|&x| x == 1.0));
        assert!(b[4..].iter().all(|&x| x == 0.0));
        let limit = (6.0f64 / (4 * 4 + 4 + 4) as f64).sqrt();
        assert!(p.doc_lstm.weight.data().iter().all(|x| x.abs() <= limit));
        assert!(p.doc_lstm.weight.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn named_and_mut_orders_agree() {
        let mut p = init_params(&tiny(), 5, None).unwrap();
        let shapes: Vec<Vec<usize>> = p.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let mut_shapes: Vec<Vec<usize>> =
            p.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, mut_shapes);
        assert_eq!(p.named()[1].0, "conv.w1.kernels");
        assert_eq!(p.named()[1].1.shape(), &[2, 1, 3]);
    }
}
