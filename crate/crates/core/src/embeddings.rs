//! Word vectors, the frozen contextual embedder interface and the learned
//! per-layer weighted sum.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::SeededRng;

/// Frozen token → vector map. Lookups never fail: a token is tried as is,
/// then lowercased, and otherwise maps to the zero vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordVectorTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("word vector dim must be positive".into()));
        }
        Ok(Self { dim, entries: BTreeMap::new() })
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(dim_err!("vector for `{token}` has {} values, table dim is {}", vector.len(), self.dim));
        }
        self.entries.insert(token.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Exact-key membership, without the lowercase fallback of [`Self::get`].
    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).or_else(|| self.entries.get(&token.to_lowercase())).map(Vec::as_slice)
    }

    /// One row per token, `len×dim`; OOV rows are zero.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(dim_err!("word vector lookup on an empty sequence"));
        }
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            match self.get(t.as_ref()) {
                Some(v) => data.extend_from_slice(v),
                None => data.extend(core::iter::repeat_n(0.0, self.dim)),
            }
        }
        Tensor::new(vec![tokens.len(), self.dim], data)
    }

    /// Order-independent FNV-1a digest over every entry's bytes.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(&(self.dim as u64).to_le_bytes());
        for (k, v) in &self.entries {
            h.write(k.as_bytes());
            for x in v {
                h.write(&x.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

/// Per-layer sub-token states for one sequence of words.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtokenStates {
    /// `L` tensors of shape `s×dim`.
    pub layers: Vec<Tensor>,
    /// Word index of each sub-token.
    pub subtoken_map: Vec<usize>,
}

/// Frozen multi-layer encoder. Implementations must be deterministic and
/// must not change under training.
pub trait ContextualEmbedder {
    fn num_layers(&self) -> usize;
    fn dim(&self) -> usize;
    fn embed(&self, words: &[&str]) -> Result<SubtokenStates>;
    /// Digest of the internal state, used to check the freeze contract.
    fn digest(&self) -> u64;
}

/// Word-level layers: `L` tensors of shape `n×dim`.
pub fn embed_words(embedder: &dyn ContextualEmbedder, words: &[&str]) -> Result<Vec<Tensor>> {
    let states = embedder.embed(words)?;
    subtoken_align(words.len(), &states.subtoken_map, &states.layers)
}

/// Breaks a word into pieces of at most `max_len` chars.
pub fn split_subtokens(word: &str, max_len: usize) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return vec![String::new()];
    }
    chars.chunks(max_len.max(1)).map(|c| c.iter().collect()).collect()
}

/// Averages sub-token states into word states, per layer.
///
/// `subtoken_map[t]` is the word owning sub-token `t`; it must start at 0,
/// never decrease, advance by at most one and end at `n_words − 1`.
pub fn subtoken_align(n_words: usize, subtoken_map: &[usize], layers: &[Tensor]) -> Result<Vec<Tensor>> {
    let s = subtoken_map.len();
    if n_words == 0 || s == 0 {
        return Err(Error::Alignment("empty word or sub-token sequence".into()));
    }
    let mut prev = None;
    for (t, &w) in subtoken_map.iter().enumerate() {
        let ok = match prev {
            None => w == 0,
            Some(p) => w == p || w == p + 1,
        };
        if !ok {
            return Err(Error::Alignment(format!("sub-token {t} maps to word {w}, breaking the contiguous partition")));
        }
        prev = Some(w);
    }
    if prev != Some(n_words - 1) {
        return Err(Error::Alignment(format!("sub-token map covers {} of {n_words} words", prev.map_or(0, |p| p + 1))));
    }
    let mut counts = vec![0usize; n_words];
    for &w in subtoken_map {
        counts[w] += 1;
    }
    layers
        .iter()
        .map(|layer| {
            let (rows, d) = layer.dims2()?;
            if rows != s {
                return Err(Error::Alignment(format!("layer has {rows} rows, sub-token map has {s}")));
            }
            let mut out = vec![0.0; n_words * d];
            for (t, &w) in subtoken_map.iter().enumerate() {
                for (o, x) in out[w * d..(w + 1) * d].iter_mut().zip(layer.row_slice(t)) {
                    *o += x;
                }
            }
            for (w, &c) in counts.iter().enumerate() {
                out[w * d..(w + 1) * d].iter_mut().for_each(|o| *o /= c as f64);
            }
            Tensor::new(vec![n_words, d], out)
        })
        .collect()
}

/// `Σ_l α_l · layers[l]` on plain tensors.
pub fn mix_layers(layers: &[Tensor], alpha: &[f64]) -> Result<Tensor> {
    if layers.len() != alpha.len() || layers.is_empty() {
        return Err(dim_err!("mix_layers: {} layers, {} weights", layers.len(), alpha.len()));
    }
    let shape = layers[0].shape().to_vec();
    let mut out = vec![0.0; layers[0].numel()];
    for (layer, &a) in layers.iter().zip(alpha) {
        if layer.shape() != shape.as_slice() {
            return Err(dim_err!("mix_layers: layer shapes {:?} and {:?} differ", layer.shape(), shape));
        }
        for (o, x) in out.iter_mut().zip(layer.data()) {
            *o += a * x;
        }
    }
    Tensor::new(shape, out)
}

/// Learnable layer weights `α₁…α_L`, initialized to `1/L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMixWeights {
    pub alpha: ParamId,
    pub layers: usize,
}

impl LayerMixWeights {
    pub fn new(store: &mut ParamStore, name: &str, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Parameter("layer mix needs at least one layer".into()));
        }
        let alpha = store.add(name, Tensor::row(vec![1.0 / layers as f64; layers])?, false)?;
        Ok(Self { alpha, layers })
    }

    /// Differentiable mix: `α (1×L) · [vec(layer_1); …; vec(layer_L)]`,
    /// reshaped back to `n×d`. Gradient flows to `α` only.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, layers: &[Tensor]) -> Result<Var> {
        if layers.len() != self.layers {
            return Err(dim_err!("layer mix expects {} layers, got {}", self.layers, layers.len()));
        }
        let (n, d) = layers[0].dims2()?;
        let mut stacked = Vec::with_capacity(self.layers * n * d);
        for l in layers {
            if l.dims2()? != (n, d) {
                return Err(dim_err!("layer mix: layer shapes [{n}×{d}] and {:?} differ", l.shape()));
            }
            stacked.extend_from_slice(l.data());
        }
        let m = g.constant(Tensor::new(vec![self.layers, n * d], stacked)?);
        let a = g.param(store, self.alpha);
        let mixed = g.matmul(a, m)?;
        g.reshape(mixed, n, d)
    }
}

/// 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic stand-in for a pretrained encoder.
///
/// Layer `l` state of sub-token `t` is
/// `tanh(E_l(piece_t) + P_l(t) + ½·(E_l(piece_{t−1}) + E_l(piece_{t+1})))`,
/// where `E_l` and `P_l` are hash-seeded random vectors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEmbedder {
    seed: u64,
    layers: usize,
    dim: usize,
    max_piece: usize,
}

impl MockEmbedder {
    pub const MAX_PIECE: usize = 6;

    pub fn new(seed: u64, layers: usize, dim: usize) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(Error::Parameter(format!("mock embedder needs L ≥ 1 and dim ≥ 1, got L={layers} dim={dim}")));
        }
        Ok(Self { seed, layers, dim, max_piece: Self::MAX_PIECE })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn vector(&self, kind: u8, layer: usize, key: &[u8]) -> Vec<f64> {
        let mut h = Fnv::new();
        h.write(&self.seed.to_le_bytes());
        h.write(&[kind]);
        h.write(&(layer as u64).to_le_bytes());
        h.write(key);
        let mut rng = SeededRng::seed_from_u64(h.finish());
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

impl ContextualEmbedder for MockEmbedder {
    fn num_layers(&self) -> usize {
        self.layers
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, words: &[&str]) -> Result<SubtokenStates> {
        let mut pieces = Vec::new();
        let mut subtoken_map = Vec::new();
        for (w, word) in words.iter().enumerate() {
            for p in split_subtokens(word, self.max_piece) {
                pieces.push(p);
                subtoken_map.push(w);
            }
        }
        let s = pieces.len();
        let layers = (0..self.layers)
            .map(|l| {
                let e: Vec<Vec<f64>> = pieces.iter().map(|p| self.vector(0, l, p.as_bytes())).collect();
                let mut data = Vec::with_capacity(s * self.dim);
                for t in 0..s {
                    let pos = self.vector(1, l, &(t as u64).to_le_bytes());
                    for k in 0..self.dim {
                        let mut v = e[t][k] + pos[k];
                        if t > 0 {
                            v += 0.5 * e[t - 1][k];
                        }
                        if t + 1 < s {
                            v += 0.5 * e[t + 1][k];
                        }
                        data.push(libm::tanh(v));
                    }
                }
                Tensor::new(vec![s.max(1), self.dim], if s == 0 { vec![0.0; self.dim] } else { data })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SubtokenStates { layers, subtoken_map })
    }

    fn digest(&self) -> u64 {
        let mut h = Fnv::new();
        for v in [self.seed, self.layers as u64, self.dim as u64, self.max_piece as u64] {
            h.write(&v.to_le_bytes());
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::{prop_assert, proptest};

    fn table() -> WordVectorTable {
        let mut t = WordVectorTable::new(3).unwrap();
        t.insert("cat", vec![1.0, 2.0, 3.0]).unwrap();
        t.insert("Paris", vec![4.0, 5.0, 6.0]).unwrap();
        t
    }

    #[test]
    fn lookup_cases() {
        let mut t = table();
        let x = t.lookup(&["cat", "dog", "CAT", "Paris", "paris"]).unwrap();
        assert_eq!(x.row_slice(0), &[1.0, 2.0, 3.0]);
        assert_eq!(x.row_slice(1), &[0.0; 3]);
        // mixed case falls back to the lowercase entry
        assert_eq!(x.row_slice(2), &[1.0, 2.0, 3.0]);
        assert_eq!(x.row_slice(3), &[4.0, 5.0, 6.0]);
        // no upward fallback
        assert_eq!(x.row_slice(4), &[0.0; 3]);
        assert!(t.insert("x", vec![1.0]).is_err());
    }

    #[test]
    fn align_identity_and_pair_mean() {
        let l = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 6.0], &[5.0, 10.0]]).unwrap();
        let out = subtoken_align(3, &[0, 1, 2], &[l.clone()]).unwrap();
        assert_eq!(out[0], l);
        let out = subtoken_align(2, &[0, 1, 1], &[l]).unwrap();
        assert_eq!(out[0].data(), &[1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn align_matches_brute_force_group_mean() {
        let mut rng = seeded_rng(3, 0);
        let map = [0, 0, 1, 2, 2];
        let layers: Vec<Tensor> = (0..2)
            .map(|_| Tensor::new(vec![5, 4], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let out = subtoken_align(3, &map, &layers).unwrap();
        for (l, layer) in layers.iter().enumerate() {
            for w in 0..3 {
                let members: Vec<usize> = (0..5).filter(|&t| map[t] == w).collect();
                for k in 0..4 {
                    let mean = members.iter().map(|&t| layer.get2(t, k)).sum::<f64>() / members.len() as f64;
                    assert!((out[l].get2(w, k) - mean).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn align_rejects_bad_partitions() {
        let l = Tensor::zeros(&[3, 2]);
        for (n, map) in [(3, &[0usize, 2, 2][..]), (3, &[0, 1, 1]), (2, &[1, 1, 1]), (2, &[0, 1, 0]), (2, &[0, 1])] {
            assert!(matches!(subtoken_align(n, map, &[l.clone()]), Err(Error::Alignment(_))), "{map:?}");
        }
    }

    #[test]
    fn mix_hand_cases() {
        let ones = Tensor::ones(&[2, 3]);
        let twos = Tensor::filled(&[2, 3], 2.0);
        let out = mix_layers(&[ones.clone(), twos.clone()], &[0.3, 0.7]).unwrap();
        assert!(out.data().iter().all(|v| (v - 1.7).abs() < 1e-15));
        let out = mix_layers(&[twos.clone()], &[1.5]).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.0));
        assert!(mix_layers(&[ones], &[0.3, 0.7]).is_err());
    }

    #[test]
    fn last_layer_weights_select_last_layer_bitwise() {
        let e = MockEmbedder::new(11, 3, 5).unwrap();
        let layers = embed_words(&e, &["the", "wonderfully", "odd", "cat"]).unwrap();
        let mut store = ParamStore::new();
        let mix = LayerMixWeights::new(&mut store, "alpha", 3).unwrap();
        store.get_mut(mix.alpha).tensor.data_mut().copy_from_slice(&[0.0, 0.0, 1.0]);
        let mut g = Graph::new();
        let out = mix.apply(&mut g, &store, &layers).unwrap();
        let a: Vec<u64> = g.data(out).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = layers[2].data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn graph_mix_gradient_reaches_alpha() {
        let e = MockEmbedder::new(2, 2, 3).unwrap();
        let layers = embed_words(&e, &["a", "b"]).unwrap();
        let mut store = ParamStore::new();
        let mix = LayerMixWeights::new(&mut store, "alpha", 2).unwrap();
        let report = crate::tensor::gradient_check_params(
            &mut store,
            |g, s| {
                let out = mix.apply(g, s, &layers)?;
                let sq = g.mul(out, out)?;
                Ok(g.sum_all(sq))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_error() < 1e-7);
    }

    #[test]
    fn mock_is_deterministic_and_content_dependent() {
        let e = MockEmbedder::new(7, 3, 16).unwrap();
        let a = embed_words(&e, &["tom", "likes", "kites"]).unwrap();
        let b = embed_words(&e, &["tom", "likes", "kites"]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].shape(), &[3, 16]);
        assert_ne!(a[0].row_slice(0), a[0].row_slice(1));
        assert_ne!(a[0], a[1]);
        let c = embed_words(&e, &["ann", "likes", "kites"]).unwrap();
        assert_ne!(a[0].row_slice(1), c[0].row_slice(1));
        assert_eq!(e.digest(), MockEmbedder::new(7, 3, 16).unwrap().digest());
    }

    #[test]
    fn long_words_split_into_pieces() {
        assert_eq!(split_subtokens("extraordinary", 6), ["extrao", "rdinar", "y"]);
        assert_eq!(split_subtokens("cat", 6), ["cat"]);
        let e = MockEmbedder::new(1, 1, 2).unwrap();
        let s = e.embed(&["extraordinary", "cat"]).unwrap();
        assert_eq!(s.subtoken_map, [0, 0, 0, 1]);
    }

    proptest! {
        #[test]
        fn mix_is_linear_in_alpha(a in proptest::collection::vec(-2.0f64..2.0, 3), b in proptest::collection::vec(-2.0f64..2.0, 3), c in -3.0f64..3.0) {
            let e = MockEmbedder::new(5, 3, 4).unwrap();
            let layers = embed_words(&e, &["x", "yy", "zzz"]).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let ma = mix_layers(&layers, &a).unwrap();
            let mb = mix_layers(&layers, &b).unwrap();
            let ms = mix_layers(&layers, &sum).unwrap();
            for ((s, x), y) in ms.data().iter().zip(ma.data()).zip(mb.data()) {
                prop_assert!((s - (x + y)).abs() < 1e-12);
            }
            let ca: Vec<f64> = a.iter().map(|x| c * x).collect();
            let mc = mix_layers(&layers, &ca).unwrap();
            for (s, x) in mc.data().iter().zip(ma.data()) {
                prop_assert!((s - c * x).abs() < 1e-12);
            }
        }

        #[test]
        fn equal_groups_preserve_layer_mean(vals in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let l = Tensor::new(vec![6, 2], vals).unwrap();
            let out = subtoken_align(3, &[0, 0, 1, 1, 2, 2], &[l.clone()]).unwrap();
            for k in 0..2 {
                let m_in = (0..6).map(|t| l.get2(t, k)).sum::<f64>() / 6.0;
                let m_out = (0..3).map(|w| out[0].get2(w, k)).sum::<f64>() / 3.0;
                prop_assert!((m_in - m_out).abs() < 1e-12);
            }
        }
    }
}
