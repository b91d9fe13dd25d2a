//! Hierarchical sentence encoder: character embeddings feed a two-layer
//! bidirectional GRU whose final states summarize each word's spelling;
//! that summary is concatenated with a word embedding and fed to a second
//! two-layer bidirectional GRU producing one feature vector per token.

use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::numerics::ops::{add_outer, matvec, matvec_backward_input, sigmoid_scalar};
use crate::numerics::ParamRef;

fn add_into(acc: &mut [f64], xs: &[f64]) {
    debug_assert_eq!(acc.len(), xs.len());
    for (a, &x) in acc.iter_mut().zip(xs.iter()) {
        *a += x;
    }
}

// ---------------------------------------------------------------------------
// Embeddings

/// Row-per-token embedding matrix. Index 1 is the unknown row; indices at
/// or beyond the table resolve to it.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub weights: ParamRef,
    pub unk_index: usize,
}

impl EmbeddingTable {
    pub fn new(weights: ParamRef, unk_index: usize) -> Self {
        EmbeddingTable { weights, unk_index }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.borrow().value.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.borrow().value.cols()
    }

    fn resolve(&self, id: usize) -> usize {
        if id < self.vocab_size() {
            id
        } else {
            self.unk_index
        }
    }

    pub fn lookup(&self, id: usize) -> Vec<f64> {
        let id = self.resolve(id);
        self.weights.borrow().value.row(id).to_vec()
    }

    pub fn accumulate_grad(&self, id: usize, d: &[f64]) {
        let id = self.resolve(id);
        let mut pair = self.weights.borrow_mut();
        add_into(pair.grad.row_mut(id), d);
    }
}

// ---------------------------------------------------------------------------
// GRU cell

/// The six weight matrices of one gate-recurrent cell. No bias vectors.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_rx: ParamRef,
    pub w_rh: ParamRef,
    pub w_zx: ParamRef,
    pub w_zh: ParamRef,
    pub w_hx: ParamRef,
    pub w_hh: ParamRef,
}

/// Intermediate values of one step, kept for the backward pass.
#[derive(Debug)]
pub struct GruStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    hc: Vec<f64>,
    rh: Vec<f64>,
}

impl GruCell {
    pub fn new(
        w_rx: ParamRef,
        w_rh: ParamRef,
        w_zx: ParamRef,
        w_zh: ParamRef,
        w_hx: ParamRef,
        w_hh: ParamRef,
    ) -> Result<Self> {
        let cell = GruCell {
            w_rx,
            w_rh,
            w_zx,
            w_zh,
            w_hx,
            w_hh,
        };
        let hidden = cell.hidden_dim();
        let input = cell.input_dim();
        let expect = |name: &str, p: &ParamRef, rows: usize, cols: usize| -> Result<()> {
            let v = &p.borrow().value;
            if v.shape() != [rows, cols] {
                return Err(Error::shape(name, &[rows, cols], v.shape()));
            }
            Ok(())
        };
        expect("w_rx", &cell.w_rx, hidden, input)?;
        expect("w_zx", &cell.w_zx, hidden, input)?;
        expect("w_hx", &cell.w_hx, hidden, input)?;
        expect("w_rh", &cell.w_rh, hidden, hidden)?;
        expect("w_zh", &cell.w_zh, hidden, hidden)?;
        expect("w_hh", &cell.w_hh, hidden, hidden)?;
        Ok(cell)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_rx.borrow().value.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_rx.borrow().value.cols()
    }

    /// One recurrence step:
    /// r = σ(W_rx x + W_rh h_prev), z = σ(W_zx x + W_zh h_prev),
    /// h̃ = tanh(W_hx x + W_hh (r ⊙ h_prev)), h = z ⊙ h_prev + (1 − z) ⊙ h̃.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruStepCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("w_rx", &[self.hidden_dim(), self.input_dim()], &[x.len()]));
        }
        if h_prev.len() != self.hidden_dim() {
            return Err(Error::shape(
                "w_rh",
                &[self.hidden_dim(), self.hidden_dim()],
                &[h_prev.len()],
            ));
        }
        let w_rx = self.w_rx.borrow();
        let w_rh = self.w_rh.borrow();
        let w_zx = self.w_zx.borrow();
        let w_zh = self.w_zh.borrow();
        let w_hx = self.w_hx.borrow();
        let w_hh = self.w_hh.borrow();

        let mut ar = matvec(&w_rx.value, x);
        add_into(&mut ar, &matvec(&w_rh.value, h_prev));
        let r: Vec<f64> = ar.iter().map(|&v| sigmoid_scalar(v)).collect();

        let mut az = matvec(&w_zx.value, x);
        add_into(&mut az, &matvec(&w_zh.value, h_prev));
        let z: Vec<f64> = az.iter().map(|&v| sigmoid_scalar(v)).collect();

        let rh: Vec<f64> = r.iter().zip(h_prev.iter()).map(|(&a, &b)| a * b).collect();
        let mut ah = matvec(&w_hx.value, x);
        add_into(&mut ah, &matvec(&w_hh.value, &rh));
        let hc: Vec<f64> = ah.iter().map(|&v| v.tanh()).collect();

        let h: Vec<f64> = (0..self.hidden_dim())
            .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * hc[i])
            .collect();
        let cache = GruStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            z,
            hc,
            rh,
        };
        Ok((h, cache))
    }

    /// Accumulates gradients of one step into the cell's parameter grads
    /// and into `dx`/`dh_prev`.
    pub fn step_backward(&self, cache: &GruStepCache, dh: &[f64], dx: &mut [f64], dh_prev: &mut [f64]) {
        let hidden = cache.r.len();
        debug_assert_eq!(dh.len(), hidden);

        let mut dz = vec![0.0; hidden];
        let mut dhc = vec![0.0; hidden];
        for i in 0..hidden {
            dz[i] = dh[i] * (cache.h_prev[i] - cache.hc[i]);
            dhc[i] = dh[i] * (1.0 - cache.z[i]);
            dh_prev[i] += dh[i] * cache.z[i];
        }

        let mut dah = vec![0.0; hidden];
        for i in 0..hidden {
            dah[i] = dhc[i] * (1.0 - cache.hc[i] * cache.hc[i]);
        }
        let mut drh = vec![0.0; hidden];
        {
            let mut w_hx = self.w_hx.borrow_mut();
            let w_hx = &mut *w_hx;
            add_outer(&mut w_hx.grad, &dah, &cache.x);
            matvec_backward_input(&w_hx.value, &dah, dx);
        }
        {
            let mut w_hh = self.w_hh.borrow_mut();
            let w_hh = &mut *w_hh;
            add_outer(&mut w_hh.grad, &dah, &cache.rh);
            matvec_backward_input(&w_hh.value, &dah, &mut drh);
        }

        let mut dar = vec![0.0; hidden];
        let mut daz = vec![0.0; hidden];
        for i in 0..hidden {
            let dr = drh[i] * cache.h_prev[i];
            dh_prev[i] += drh[i] * cache.r[i];
            dar[i] = dr * cache.r[i] * (1.0 - cache.r[i]);
            daz[i] = dz[i] * cache.z[i] * (1.0 - cache.z[i]);
        }
        {
            let mut w_rx = self.w_rx.borrow_mut();
            let w_rx = &mut *w_rx;
            add_outer(&mut w_rx.grad, &dar, &cache.x);
            matvec_backward_input(&w_rx.value, &dar, dx);
        }
        {
            let mut w_rh = self.w_rh.borrow_mut();
            let w_rh = &mut *w_rh;
            add_outer(&mut w_rh.grad, &dar, &cache.h_prev);
            matvec_backward_input(&w_rh.value, &dar, dh_prev);
        }
        {
            let mut w_zx = self.w_zx.borrow_mut();
            let w_zx = &mut *w_zx;
            add_outer(&mut w_zx.grad, &daz, &cache.x);
            matvec_backward_input(&w_zx.value, &daz, dx);
        }
        {
            let mut w_zh = self.w_zh.borrow_mut();
            let w_zh = &mut *w_zh;
            add_outer(&mut w_zh.grad, &daz, &cache.h_prev);
            matvec_backward_input(&w_zh.value, &daz, dh_prev);
        }
    }
}

// ---------------------------------------------------------------------------
// Bidirectional two-layer stack

#[derive(Clone, Debug)]
pub struct BiLayer {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

impl BiLayer {
    pub fn new(fwd: GruCell, bwd: GruCell) -> Result<Self> {
        if fwd.hidden_dim() != bwd.hidden_dim() || fwd.input_dim() != bwd.input_dim() {
            return Err(Error::domain(
                "forward and backward cells of a layer must share dimensions",
            ));
        }
        Ok(BiLayer { fwd, bwd })
    }
}

/// Exactly two bidirectional layers; layer 2 consumes the concatenated
/// directions of layer 1.
#[derive(Clone, Debug)]
pub struct BiGruStack {
    layers: Vec<BiLayer>,
}

pub struct DirectionCache {
    steps: Vec<GruStepCache>,
}

pub struct LayerCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
}

pub struct StackCache {
    layers: Vec<LayerCache>,
    len: usize,
}

impl BiGruStack {
    pub fn new(layers: Vec<BiLayer>) -> Result<Self> {
        if layers.len() != 2 {
            return Err(Error::domain(format!(
                "stack must have exactly 2 layers, got {}",
                layers.len()
            )));
        }
        let hidden = layers[0].fwd.hidden_dim();
        for (i, layer) in layers.iter().enumerate() {
            if layer.fwd.hidden_dim() != hidden {
                return Err(Error::domain("all layers must share one hidden size"));
            }
            if i > 0 && layer.fwd.input_dim() != 2 * hidden {
                return Err(Error::shape(
                    "layer input",
                    &[layer.fwd.hidden_dim(), 2 * hidden],
                    &[layer.fwd.hidden_dim(), layer.fwd.input_dim()],
                ));
            }
        }
        Ok(BiGruStack { layers })
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].fwd.hidden_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fwd.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn layers(&self) -> &[BiLayer] {
        &self.layers
    }

    /// Runs both layers over the sequence; output t is the concatenation
    /// of the top layer's forward and backward states at t.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, StackCache)> {
        if xs.is_empty() {
            return Err(Error::domain("cannot encode an empty sequence"));
        }
        let mut current: Vec<Vec<f64>> = xs.to_vec();
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (hs_f, cache_f) = run_direction(&layer.fwd, &current, false)?;
            let (hs_b, cache_b) = run_direction(&layer.bwd, &current, true)?;
            current = hs_f
                .into_iter()
                .zip(hs_b)
                .map(|(mut f, b)| {
                    f.extend(b);
                    f
                })
                .collect();
            layer_caches.push(LayerCache {
                fwd: cache_f,
                bwd: cache_b,
            });
        }
        let cache = StackCache {
            layers: layer_caches,
            len: xs.len(),
        };
        Ok((current, cache))
    }

    /// Backpropagates through both layers; returns gradients w.r.t. the
    /// stack inputs and accumulates into all cell parameters.
    pub fn backward(&self, cache: &StackCache, d_out: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if d_out.len() != cache.len {
            return Err(Error::domain(format!(
                "gradient has {} positions, cache has {}",
                d_out.len(),
                cache.len
            )));
        }
        let hidden = self.hidden_dim();
        let mut d_current: Vec<Vec<f64>> = d_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input_dim = layer.fwd.input_dim();
            let mut d_inputs = vec![vec![0.0; input_dim]; cache.len];
            let lc = &cache.layers[li];
            let d_f: Vec<&[f64]> = d_current.iter().map(|d| &d[..hidden]).collect();
            backward_direction(&layer.fwd, &lc.fwd, &d_f, &mut d_inputs, false);
            let d_b: Vec<&[f64]> = d_current.iter().map(|d| &d[hidden..]).collect();
            backward_direction(&layer.bwd, &lc.bwd, &d_b, &mut d_inputs, true);
            d_current = d_inputs;
        }
        Ok(d_current)
    }
}

/// Runs one direction over the sequence from a zero initial state.
/// Outputs and caches are indexed by sequence position.
fn run_direction(
    cell: &GruCell,
    xs: &[Vec<f64>],
    reverse: bool,
) -> Result<(Vec<Vec<f64>>, DirectionCache)> {
    let t_count = xs.len();
    let mut hs: Vec<Vec<f64>> = vec![Vec::new(); t_count];
    let mut steps: Vec<Option<GruStepCache>> = (0..t_count).map(|_| None).collect();
    let mut h = vec![0.0; cell.hidden_dim()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_count).rev())
    } else {
        Box::new(0..t_count)
    };
    for t in order {
        let (h_new, cache) = cell.step(&xs[t], &h)?;
        hs[t] = h_new.clone();
        steps[t] = Some(cache);
        h = h_new;
    }
    let steps = steps.into_iter().map(|c| c.expect("all steps ran")).collect();
    Ok((hs, DirectionCache { steps }))
}

/// Walks the steps in reverse computation order, carrying the recurrent
/// gradient; `d_h[t]` is the direct gradient on the state at position t.
fn backward_direction(
    cell: &GruCell,
    cache: &DirectionCache,
    d_h: &[&[f64]],
    d_inputs: &mut [Vec<f64>],
    reverse: bool,
) {
    let t_count = cache.steps.len();
    let hidden = cell.hidden_dim();
    let mut carry = vec![0.0; hidden];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new(0..t_count)
    } else {
        Box::new((0..t_count).rev())
    };
    for t in order {
        let mut dh = carry;
        add_into(&mut dh, d_h[t]);
        let mut next_carry = vec![0.0; hidden];
        cell.step_backward(&cache.steps[t], &dh, &mut d_inputs[t], &mut next_carry);
        carry = next_carry;
    }
}

// ---------------------------------------------------------------------------
// Word-from-characters representation

pub struct WordCharsCache {
    stack: StackCache,
    char_ids: Vec<usize>,
    len: usize,
}

/// Embeds a word's characters, runs the character stack, and returns the
/// concatenation of the top layer's forward state at the last position
/// and backward state at the first.
pub fn encode_word_chars(
    table: &EmbeddingTable,
    stack: &BiGruStack,
    chars: &[usize],
) -> Result<(Vec<f64>, WordCharsCache)> {
    if chars.is_empty() {
        return Err(Error::domain("cannot encode a word with no characters"));
    }
    let xs: Vec<Vec<f64>> = chars.iter().map(|&c| table.lookup(c)).collect();
    let (hs, cache) = stack.forward(&xs)?;
    let hidden = stack.hidden_dim();
    let t_last = hs.len() - 1;
    let mut rep = hs[t_last][..hidden].to_vec();
    rep.extend_from_slice(&hs[0][hidden..]);
    Ok((
        rep,
        WordCharsCache {
            stack: cache,
            char_ids: chars.to_vec(),
            len: chars.len(),
        },
    ))
}

pub fn encode_word_chars_backward(
    table: &EmbeddingTable,
    stack: &BiGruStack,
    cache: &WordCharsCache,
    d_rep: &[f64],
) -> Result<()> {
    let hidden = stack.hidden_dim();
    debug_assert_eq!(d_rep.len(), 2 * hidden);
    let mut d_out = vec![vec![0.0; 2 * hidden]; cache.len];
    let t_last = cache.len - 1;
    d_out[t_last][..hidden].copy_from_slice(&d_rep[..hidden]);
    add_into(&mut d_out[0][hidden..], &d_rep[hidden..]);
    let d_xs = stack.backward(&cache.stack, &d_out)?;
    for (&cid, dx) in cache.char_ids.iter().zip(d_xs.iter()) {
        table.accumulate_grad(cid, dx);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Full encoder

/// Character and word tables plus both stacks. The per-token feature is
/// the word stack's output.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub char_table: EmbeddingTable,
    pub char_stack: BiGruStack,
    pub word_table: EmbeddingTable,
    pub word_stack: BiGruStack,
}

pub struct EncodeCache {
    char_caches: Vec<WordCharsCache>,
    word_ids: Vec<usize>,
    word_stack: StackCache,
    char_rep_dim: usize,
}

impl Encoder {
    pub fn new(
        char_table: EmbeddingTable,
        char_stack: BiGruStack,
        word_table: EmbeddingTable,
        word_stack: BiGruStack,
    ) -> Result<Self> {
        let expected = 2 * char_stack.hidden_dim() + word_table.dim();
        if word_stack.input_dim() != expected {
            return Err(Error::shape(
                "word stack input",
                &[expected],
                &[word_stack.input_dim()],
            ));
        }
        if char_stack.input_dim() != char_table.dim() {
            return Err(Error::shape(
                "char stack input",
                &[char_table.dim()],
                &[char_stack.input_dim()],
            ));
        }
        Ok(Encoder {
            char_table,
            char_stack,
            word_table,
            word_stack,
        })
    }

    /// Width of the per-token output vector.
    pub fn output_dim(&self) -> usize {
        self.word_stack.output_dim()
    }

    /// Per token: concat(character representation, word embedding) into
    /// the word stack; returns the word stack outputs.
    pub fn encode(&self, sent: &Sentence) -> Result<(Vec<Vec<f64>>, EncodeCache)> {
        if sent.is_empty() {
            return Err(Error::domain("cannot encode an empty sentence"));
        }
        let char_rep_dim = 2 * self.char_stack.hidden_dim();
        let mut inputs = Vec::with_capacity(sent.len());
        let mut char_caches = Vec::with_capacity(sent.len());
        for (chars, &wid) in sent.char_ids.iter().zip(sent.word_ids.iter()) {
            let (mut rep, cache) = encode_word_chars(&self.char_table, &self.char_stack, chars)?;
            rep.extend(self.word_table.lookup(wid));
            inputs.push(rep);
            char_caches.push(cache);
        }
        let (hs, word_cache) = self.word_stack.forward(&inputs)?;
        Ok((
            hs,
            EncodeCache {
                char_caches,
                word_ids: sent.word_ids.clone(),
                word_stack: word_cache,
                char_rep_dim,
            },
        ))
    }

    /// Backpropagates `d_h` (gradient per token feature) into every
    /// encoder parameter.
    pub fn backward(&self, cache: &EncodeCache, d_h: &[Vec<f64>]) -> Result<()> {
        let d_inputs = self.word_stack.backward(&cache.word_stack, d_h)?;
        let split = cache.char_rep_dim;
        for ((d_in, char_cache), &wid) in d_inputs
            .iter()
            .zip(cache.char_caches.iter())
            .zip(cache.word_ids.iter())
        {
            encode_word_chars_backward(
                &self.char_table,
                &self.char_stack,
                char_cache,
                &d_in[..split],
            )?;
            self.word_table.accumulate_grad(wid, &d_in[split..]);
        }
        Ok(())
    }
}
