use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use super::{ModelConfig, ModelParams, ParamGrads, Result, SidenetError};
use crate::corpus::EncodedDocument;
use crate::ndcore::{lstm_cell, Graph, LstmState, LstmVars, Tensor, Var};

/// Parameters placed on a graph for one document.
///
/// Only the embedding rows the document actually uses are copied in, as a
/// small local table, so gradients never touch the full vocabulary.
struct Bound {
    vocab_rows: Vec<u32>,
    local: HashMap<u32, usize>,
    table: Var,
    conv: Vec<(Var, Var)>,
    doc_lstm: LstmVars,
    ext_lstm: LstmVars,
    attention: Var,
    v_h: Var,
    w_side: Var,
    u_o: Var,
}

impl Bound {
    fn new<'a>(
        g: &mut Graph,
        params: &ModelParams,
        rows: impl IntoIterator<Item = &'a [u32]>,
    ) -> Result<Self> {
        let vocab = params.vocab_size();
        let mut ids = BTreeSet::new();
        for row in rows {
            for &id in row {
                if id as usize >= vocab {
                    return Err(SidenetError::Input(format!(
                        "word id {id} outside vocabulary of {vocab}"
                    )));
                }
                ids.insert(id);
            }
        }
        let vocab_rows: Vec<u32> = ids.into_iter().collect();
        let dim = params.embedding.shape()[1];
        let mut data = Vec::with_capacity(vocab_rows.len() * dim);
        for &id in &vocab_rows {
            data.extend_from_slice(params.embedding.row(id as usize));
        }
        let table = g.param(Tensor::new(vec![vocab_rows.len(), dim], data)?);
        let local = vocab_rows
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let conv = params
            .conv
            .iter()
            .map(|bank| (g.param(bank.kernels.clone()), g.param(bank.bias.clone())))
            .collect();
        let mut lstm = |p: &super::LstmParams| LstmVars {
            weight: g.param(p.weight.clone()),
            bias: g.param(p.bias.clone()),
        };
        let doc_lstm = lstm(&params.doc_lstm);
        let ext_lstm = lstm(&params.ext_lstm);
        Ok(Self {
            vocab_rows,
            local,
            table,
            conv,
            doc_lstm,
            ext_lstm,
            attention: g.param(params.attention.clone()),
            v_h: g.param(params.v_h.clone()),
            w_side: g.param(params.w_side.clone()),
            u_o: g.param(params.u_o.clone()),
        })
    }

    fn encode(&self, g: &mut Graph, ids: &[u32], config: &ModelConfig) -> Result<Var> {
        let local: Vec<usize> = ids.iter().map(|id| self.local[id]).collect();
        let words = g.gather(self.table, &local)?;
        let mut features = Vec::with_capacity(self.conv.len());
        for &(kernels, bias) in &self.conv {
            let map = g.temporal_conv(words, kernels, bias)?;
            let mut pooled = g.max_over_time(map)?;
            if let Some(lrn) = config.lrn {
                pooled = g.lrn(pooled, lrn)?;
            }
            features.push(pooled);
        }
        Ok(g.concat(&features)?)
    }

    fn grads(&self, mut grads: crate::ndcore::Gradients) -> ParamGrads {
        let table = grads.take(self.table);
        let embedding_rows = self
            .vocab_rows
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, table.row(i).to_vec()))
            .collect();
        let mut dense = Vec::new();
        for &(k, b) in &self.conv {
            dense.push(grads.take(k));
            dense.push(grads.take(b));
        }
        for v in [
            self.doc_lstm.weight,
            self.doc_lstm.bias,
            self.ext_lstm.weight,
            self.ext_lstm.bias,
            self.attention,
            self.v_h,
            self.w_side,
            self.u_o,
        ] {
            dense.push(grads.take(v));
        }
        ParamGrads {
            embedding_rows,
            dense,
        }
    }
}

fn zero_state(g: &mut Graph, size: usize) -> LstmState {
    LstmState {
        h: g.constant(Tensor::zeros(&[size])),
        c: g.constant(Tensor::zeros(&[size])),
    }
}

/// Runs the document encoder over `sentences` last to first.
fn run_encoder(
    g: &mut Graph,
    sentences: &[Var],
    weights: LstmVars,
    size: usize,
) -> Result<Vec<LstmState>> {
    let mut state = zero_state(g, size);
    let mut states = Vec::with_capacity(sentences.len());
    for &s in sentences.iter().rev() {
        state = lstm_cell(g, s, state, weights)?;
        states.push(state);
    }
    Ok(states)
}

/// `score_i = (P h) · c_i`, `alpha = softmax over unmasked rows`,
/// `context = sum_i alpha_i c_i`.
fn attend(g: &mut Graph, h: Var, side: Var, mask: &[bool], proj: Var) -> Result<(Var, Var)> {
    let query = g.matvec(proj, h)?;
    let scores = g.matvec(side, query)?;
    let alpha = g.masked_softmax(scores, mask)?;
    let p = mask.len();
    let row = g.reshape(alpha, &[1, p])?;
    let context = g.matmul(row, side)?;
    let dim = g.value(side).shape()[1];
    let context = g.reshape(context, &[dim])?;
    Ok((context, alpha))
}

struct Forward {
    graph: Graph,
    bound: Bound,
    rows: Vec<usize>,
    probs: Vec<Var>,
    alphas: Vec<Option<Var>>,
}

fn check_encoded(encoded: &EncodedDocument) -> Result<()> {
    if encoded.sentence_ids.len() != encoded.sentence_mask.len()
        || encoded.side_ids.len() != encoded.side_mask.len()
    {
        return Err(SidenetError::Input(
            "id rows and masks differ in length".into(),
        ));
    }
    if let Some(labels) = &encoded.labels {
        if labels.len() != encoded.sentence_ids.len() {
            return Err(SidenetError::Input(
                "labels and sentence rows differ in length".into(),
            ));
        }
    }
    if encoded.num_sentences() == 0 {
        return Err(SidenetError::Input("document has no sentences".into()));
    }
    Ok(())
}

fn forward(
    encoded: &EncodedDocument,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Forward> {
    check_encoded(encoded)?;
    let rows: Vec<usize> = (0..encoded.sentence_ids.len())
        .filter(|&i| encoded.sentence_mask[i])
        .collect();
    let side_rows: Vec<usize> = (0..encoded.side_ids.len())
        .filter(|&i| encoded.side_mask[i])
        .collect();

    let mut g = Graph::new();
    let used = rows
        .iter()
        .map(|&i| encoded.sentence_ids[i].as_slice())
        .chain(side_rows.iter().map(|&i| encoded.side_ids[i].as_slice()));
    let bound = Bound::new(&mut g, params, used)?;

    let sentences = rows
        .iter()
        .map(|&i| bound.encode(&mut g, &encoded.sentence_ids[i], config))
        .collect::<Result<Vec<_>>>()?;

    let dim = config.sentence_dim();
    let side = if side_rows.is_empty() {
        None
    } else {
        let mut parts = Vec::with_capacity(encoded.side_ids.len());
        for (ids, &keep) in encoded.side_ids.iter().zip(&encoded.side_mask) {
            parts.push(if keep {
                bound.encode(&mut g, ids, config)?
            } else {
                g.constant(Tensor::zeros(&[dim]))
            });
        }
        let flat = g.concat(&parts)?;
        Some(g.reshape(flat, &[parts.len(), dim])?)
    };

    let size = config.lstm_size;
    let encoder_states = run_encoder(&mut g, &sentences, bound.doc_lstm, size)?;
    let mut state = *encoder_states.last().expect("at least one sentence");
    let no_side = g.constant(Tensor::zeros(&[dim]));
    let mut probs = Vec::with_capacity(rows.len());
    let mut alphas = Vec::with_capacity(rows.len());
    for &s in &sentences {
        state = lstm_cell(&mut g, s, state, bound.ext_lstm)?;
        let (context, alpha) = match side {
            Some(side) => {
                let (c, a) = attend(&mut g, state.h, side, &encoded.side_mask, bound.attention)?;
                (c, Some(a))
            }
            None => (no_side, None),
        };
        let from_h = g.matvec(bound.v_h, state.h)?;
        let from_side = g.matvec(bound.w_side, context)?;
        let hidden = g.add(from_h, from_side)?;
        let logits = g.matvec(bound.u_o, hidden)?;
        probs.push(g.softmax(logits)?);
        alphas.push(alpha);
    }
    Ok(Forward {
        graph: g,
        bound,
        rows,
        probs,
        alphas,
    })
}

/// Label distributions for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Sentence row of each output, in document order.
    pub rows: Vec<usize>,
    /// `[p(y = 0), p(y = 1)]` per unmasked sentence.
    pub probs: Vec<[f64; 2]>,
    /// Attention over all side rows at each step; empty when the document
    /// has no unmasked side rows.
    pub attention: Vec<Vec<f64>>,
}

impl Extraction {
    pub fn positive(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p[1]).collect()
    }
}

pub fn extract_probs(
    encoded: &EncodedDocument,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Extraction> {
    let f = forward(encoded, params, config)?;
    let probs = f
        .probs
        .iter()
        .map(|&p| {
            let d = f.graph.value(p).data();
            [d[0], d[1]]
        })
        .collect();
    let attention = f
        .alphas
        .iter()
        .filter_map(|a| a.map(|a| f.graph.value(a).data().to_vec()))
        .collect();
    Ok(Extraction {
        rows: f.rows,
        probs,
        attention,
    })
}

fn build_loss(f: &mut Forward, encoded: &EncodedDocument) -> Result<Var> {
    let labels = encoded.labels.as_ref().ok_or(SidenetError::MissingLabels)?;
    let g = &mut f.graph;
    let mut total: Option<Var> = None;
    for (&row, &p) in f.rows.iter().zip(&f.probs) {
        let label = labels[row];
        if label > 1 {
            return Err(SidenetError::Input(format!("label {label} is not 0 or 1")));
        }
        let term = g.cross_entropy(p, label as usize)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let total = total.expect("at least one sentence");
    Ok(g.scale(total, 1.0 / f.rows.len() as f64)?)
}

/// Mean cross-entropy over the unmasked sentences.
pub fn loss(encoded: &EncodedDocument, params: &ModelParams, config: &ModelConfig) -> Result<f64> {
    let mut f = forward(encoded, params, config)?;
    let l = build_loss(&mut f, encoded)?;
    Ok(f.graph.value(l).item()?)
}

pub fn loss_and_grads(
    encoded: &EncodedDocument,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, ParamGrads)> {
    let mut f = forward(encoded, params, config)?;
    let l = build_loss(&mut f, encoded)?;
    let value = f.graph.value(l).item()?;
    let grads = f.graph.backward(l)?;
    Ok((value, f.bound.grads(grads)))
}

/// Mean loss and gradient over a batch.
///
/// Documents are processed in parallel, then summed in batch order, so the
/// result does not depend on thread scheduling.
pub fn batch_loss_and_grads(
    docs: &[&EncodedDocument],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(f64, ParamGrads)> {
    if docs.is_empty() {
        return Err(SidenetError::Input("empty batch".into()));
    }
    let per_doc: Vec<(f64, ParamGrads)> = docs
        .par_iter()
        .map(|d| loss_and_grads(d, params, config))
        .collect::<Result<_>>()?;
    let mut total = ParamGrads::zeros_like(params);
    let mut loss = 0.0;
    for (l, grads) in &per_doc {
        loss += l;
        total.accumulate(grads)?;
    }
    let scale = 1.0 / docs.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// Encodes one id row into a sentence vector.
pub fn encode_sentence(
    word_ids: &[u32],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, params, [word_ids])?;
    let v = bound.encode(&mut g, word_ids, config)?;
    Ok(g.value(v).clone())
}

/// Document encoder output: the final state plus every intermediate one,
/// in the order they were produced (last sentence first).
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentStates {
    pub h: Tensor,
    pub c: Tensor,
    pub states: Vec<(Tensor, Tensor)>,
}

/// Runs the document encoder over the unmasked rows of `sentence_embs`
/// (`[n x sentence_dim]`), last row first.
pub fn encode_document(
    sentence_embs: &Tensor,
    mask: &[bool],
    params: &ModelParams,
) -> Result<DocumentStates> {
    let shape = sentence_embs.shape();
    if shape.len() != 2 || shape[0] != mask.len() {
        return Err(SidenetError::Input(format!(
            "sentence matrix {shape:?} does not match {} mask entries",
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(SidenetError::Input("document has no sentences".into()));
    }
    let mut g = Graph::new();
    let weights = LstmVars {
        weight: g.constant(params.doc_lstm.weight.clone()),
        bias: g.constant(params.doc_lstm.bias.clone()),
    };
    let sentences: Vec<Var> = (0..shape[0])
        .filter(|&i| mask[i])
        .map(|i| g.constant(Tensor::vector(sentence_embs.row(i).to_vec())))
        .collect();
    let size = params.doc_lstm.bias.len() / 4;
    let states = run_encoder(&mut g, &sentences, weights, size)?;
    let states: Vec<(Tensor, Tensor)> = states
        .iter()
        .map(|s| (g.value(s.h).clone(), g.value(s.c).clone()))
        .collect();
    let (h, c) = states.last().cloned().expect("at least one sentence");
    Ok(DocumentStates { h, c, states })
}

/// Attention of state `h` over the rows of `side` (`[p x sentence_dim]`).
/// Returns the attended context and the weights.
pub fn attend_side(
    h: &Tensor,
    side: &Tensor,
    mask: &[bool],
    params: &ModelParams,
) -> Result<(Tensor, Tensor)> {
    if side.rank() != 2 || side.shape()[0] != mask.len() {
        return Err(SidenetError::Input(format!(
            "side matrix {:?} does not match {} mask entries",
            side.shape(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(SidenetError::Input("every side row is masked".into()));
    }
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let sv = g.constant(side.clone());
    let proj = g.constant(params.attention.clone());
    let (context, alpha) = attend(&mut g, hv, sv, mask, proj)?;
    Ok((g.value(context).clone(), g.value(alpha).clone()))
}

/// The `m` highest-scoring sentences in document order; ties go to the
/// earlier sentence.
pub fn generate_summary(positive: &[f64], m: usize) -> Result<Vec<usize>> {
    if m < 1 {
        return Err(SidenetError::Input(
            "summary length must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..positive.len()).collect();
    order.sort_by(|&a, &b| positive[b].total_cmp(&positive[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Limits, SideConfig, PAD};
    use crate::ndcore::LrnParams;
    use crate::sidenet::init_params;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embedding_dim: 4,
            kernel_widths: vec![1, 2],
            channels_per_width: 3,
            lstm_size: 5,
            output_hidden: 5,
            limits: Limits {
                sent_len: 4,
                doc_len: 4,
                max_captions: 2,
            },
            side: SideConfig::TITLE_CAPTION,
            lrn: Some(LrnParams::default()),
            seed: 3,
        }
    }

    fn random_params(config: &ModelConfig, vocab: usize) -> ModelParams {
        let mut p = init_params(config, vocab, None).unwrap();
        for (i, x) in p.embedding.data_mut().iter_mut().enumerate() {
            *x = ((i * 37 % 17) as f64 - 8.0) / 10.0;
        }
        p
    }

    fn doc() -> EncodedDocument {
        EncodedDocument {
            sentence_ids: vec![
                vec![2, 3, 4, 0],
                vec![5, 6, 0, 0],
                vec![7, 2, 3, 9],
                vec![0; 4],
            ],
            sentence_mask: vec![true, true, true, false],
            side_ids: vec![vec![8, 9, 0, 0], vec![4, 5, 6, 0], vec![0; 4]],
            side_mask: vec![true, true, false],
            labels: Some(vec![1, 0, 1, 0]),
        }
    }

    #[test]
    fn generate_summary_examples() {
        assert_eq!(
            generate_summary(&[0.9, 0.1, 0.8, 0.7, 0.2], 3).unwrap(),
            vec![0, 2, 3]
        );
        assert_eq!(generate_summary(&[0.1, 0.2], 3).unwrap(), vec![0, 1]);
        assert_eq!(
            generate_summary(&[0.9, 0.5, 0.5, 0.5], 3).unwrap(),
            vec![0, 1, 2]
        );
        assert!(generate_summary(&[0.5], 0).is_err());
    }

    #[test]
    fn all_pad_sentence_features_are_ln2() {
        let mut c = tiny();
        c.lrn = None;
        let mut p = init_params(&c, 10, None).unwrap();
        p.embedding.row_mut(PAD as usize).fill(0.0);
        let v = encode_sentence(&[PAD; 4], &p, &c).unwrap();
        assert_eq!(v.len(), c.sentence_dim());
        assert!(v.data().iter().all(|&x| (x - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn permuting_kernels_permutes_one_block() {
        let c = tiny();
        let p = random_params(&c, 10);
        let mut q = p.clone();
        let k = &mut q.conv[1].kernels;
        let span = 2 * 4;
        let data = k.data_mut();
        let first: Vec<f64> = data[..span].to_vec();
        data.copy_within(span..2 * span, 0);
        data[span..2 * span].copy_from_slice(&first);
        let mut c2 = c.clone();
        c2.lrn = None;
        let a = encode_sentence(&[2, 3, 4, 5], &p, &c2).unwrap();
        let b = encode_sentence(&[2, 3, 4, 5], &q, &c2).unwrap();
        assert_eq!(a.data()[..3], b.data()[..3]);
        assert_eq!(a.data()[3], b.data()[4]);
        assert_eq!(a.data()[4], b.data()[3]);
        assert_eq!(a.data()[5], b.data()[5]);
    }

    #[test]
    fn document_encoder_reads_in_reverse() {
        let c = tiny();
        let p = random_params(&c, 10);
        let embs = Tensor::matrix(3, 6, (0..18).map(|i| (i as f64 - 9.0) / 9.0).collect()).unwrap();
        let out = encode_document(&embs, &[true, true, true], &p).unwrap();
        assert_eq!(out.states.len(), 3);

        // single sentence equals one cell step from zero
        let last = Tensor::matrix(1, 6, embs.row(2).to_vec()).unwrap();
        let one = encode_document(&last, &[true], &p).unwrap();
        assert_eq!(one.states[0], out.states[0]);

        let masked = Tensor::matrix(4, 6, [embs.data(), &[9.0; 6]].concat()).unwrap();
        let skip = encode_document(&masked, &[true, true, true, false], &p).unwrap();
        assert_eq!(skip.h, out.h);
        assert!(encode_document(&embs, &[false; 3], &p).is_err());
    }

    #[test]
    fn attention_examples() {
        let c = tiny();
        let mut p = random_params(&c, 10);
        let h = Tensor::vector(vec![0.3; 5]);
        let side = Tensor::matrix(1, 6, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (ctx, alpha) = attend_side(&h, &side, &[true], &p).unwrap();
        assert_eq!(alpha.data(), &[1.0]);
        assert_eq!(ctx.data(), side.data());

        p.attention = Tensor::zeros(&[6, 5]);
        let side4 = Tensor::matrix(4, 6, (0..24).map(f64::from).collect()).unwrap();
        let (_, alpha) = attend_side(&h, &side4, &[true; 4], &p).unwrap();
        assert!(alpha.data().iter().all(|&a| (a - 0.25).abs() < 1e-15));

        // scores [0, ln 3]: P h = e_0 * ln3, c_1 = e_0
        let mut proj = Tensor::zeros(&[6, 5]);
        proj.data_mut()[0] = 3f64.ln();
        p.attention = proj;
        let h = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let mut side2 = Tensor::zeros(&[2, 6]);
        side2.row_mut(1)[0] = 1.0;
        let (_, alpha) = attend_side(&h, &side2, &[true, true], &p).unwrap();
        assert!((alpha.data()[0] - 0.25).abs() < 1e-12);
        assert!((alpha.data()[1] - 0.75).abs() < 1e-12);

        assert!(attend_side(&h, &side2, &[false, false], &p).is_err());
    }

    #[test]
    fn extraction_shape_and_normalization() {
        let c = tiny();
        let p = random_params(&c, 10);
        let e = extract_probs(&doc(), &p, &c).unwrap();
        assert_eq!(e.rows, vec![0, 1, 2]);
        assert_eq!(e.probs.len(), 3);
        for pr in &e.probs {
            assert!((pr[0] + pr[1] - 1.0).abs() < 1e-12);
        }
        for a in &e.attention {
            assert_eq!(a.len(), 3);
            assert_eq!(a[2], 0.0);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_layer_gives_half() {
        let c = tiny();
        let mut p = random_params(&c, 10);
        p.u_o = Tensor::zeros(&[2, 5]);
        let e = extract_probs(&doc(), &p, &c).unwrap();
        assert!(e.probs.iter().all(|pr| pr[1] == 0.5));
        assert!((loss(&doc(), &p, &c).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_side_rows_uses_zero_context() {
        let c = tiny();
        let p = random_params(&c, 10);
        let mut d = doc();
        d.side_mask = vec![false; 3];
        let e = extract_probs(&d, &p, &c).unwrap();
        assert!(e.attention.is_empty());
        assert_eq!(e.probs.len(), 3);
    }

    #[test]
    fn loss_requires_labels_and_valid_ids() {
        let c = tiny();
        let p = random_params(&c, 10);
        let mut d = doc();
        d.labels = None;
        assert!(matches!(loss(&d, &p, &c), Err(SidenetError::MissingLabels)));
        let mut d = doc();
        d.sentence_ids[0][0] = 99;
        assert!(loss(&d, &p, &c).is_err());
    }

    #[test]
    fn batch_gradient_is_mean_of_documents() {
        let c = tiny();
        let p = random_params(&c, 10);
        let a = doc();
        let mut b = doc();
        b.labels = Some(vec![0, 1, 1, 0]);
        let (la, ga) = loss_and_grads(&a, &p, &c).unwrap();
        let (lb, gb) = loss_and_grads(&b, &p, &c).unwrap();
        let (l, g) = batch_loss_and_grads(&[&a, &b], &p, &c).unwrap();
        assert!((l - (la + lb) / 2.0).abs() < 1e-15);
        let mut expected = ga.clone();
        expected.accumulate(&gb).unwrap();
        expected.scale(0.5);
        assert_eq!(g, expected);
    }
}
