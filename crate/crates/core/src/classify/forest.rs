//! Random forest of Gini-split CART trees, and a majority vote over five forests.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, usable: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (usable as f64).sqrt().floor() as usize,
            MaxFeatures::All => usable,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, usable.max(1))
    }

    fn code(self) -> u64 {
        match self {
            MaxFeatures::Sqrt => 0,
            MaxFeatures::All => 1,
            MaxFeatures::Count(k) => 2 + k as u64,
        }
    }

    fn from_code(c: u64) -> Self {
        match c {
            0 => MaxFeatures::Sqrt,
            1 => MaxFeatures::All,
            k => MaxFeatures::Count((k - 2) as usize),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Split {
        feature: u32,
        threshold: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        impostor: u32,
        genuine: u32,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f32]) -> (u32, u32) {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature as usize] <= threshold { left } else { right } as usize;
                }
                Node::Leaf { impostor, genuine } => return (impostor, genuine),
            }
        }
    }

    fn votes_genuine(&self, x: &[f32]) -> bool {
        let (imp, gen) = self.leaf(x);
        gen > imp
    }

    fn encode(&self, w: &mut Writer) {
        w.len(self.nodes.len());
        for n in &self.nodes {
            match *n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.u8(0);
                    w.u32(feature);
                    w.f32(threshold);
                    w.u32(left);
                    w.u32(right);
                }
                Node::Leaf { impostor, genuine } => {
                    w.u8(1);
                    w.u32(impostor);
                    w.u32(genuine);
                }
            }
        }
    }

    fn decode(r: &mut Reader<'_>, dim: usize) -> Result<Self> {
        let n = r.len(9)?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(match r.u8()? {
                0 => Node::Split {
                    feature: r.u32()?,
                    threshold: r.f32()?,
                    left: r.u32()?,
                    right: r.u32()?,
                },
                1 => Node::Leaf {
                    impostor: r.u32()?,
                    genuine: r.u32()?,
                },
                t => return Err(Error::Format(format!("unknown tree node tag {t}"))),
            });
        }
        // children must point forward so evaluation always terminates
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Split {
                feature, left, right, ..
            } = *node
            {
                let ok = |c: u32| (c as usize) > i && (c as usize) < n;
                if feature as usize >= dim || !ok(left) || !ok(right) {
                    return Err(Error::Format("corrupt tree node".into()));
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::Format("empty tree".into()));
        }
        Ok(Self { nodes })
    }
}

#[inline]
fn gini_sum(imp: usize, gen: usize) -> f64 {
    // n · gini, so weighted child impurities add directly
    let n = (imp + gen) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (a, b) = (imp as f64, gen as f64);
    n - (a * a + b * b) / n
}

struct Builder<'a> {
    data: &'a Dataset,
    genuine: Vec<bool>,
    usable: &'a [usize],
    mtry: usize,
    params: &'a ForestParams,
    nodes: Vec<Node>,
    scratch: Vec<(f32, bool)>,
}

struct BestSplit {
    feature: usize,
    threshold: f32,
    impurity: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> (usize, usize) {
        let gen = idx.iter().filter(|&&i| self.genuine[i]).count();
        (idx.len() - gen, gen)
    }

    fn best_on(&mut self, idx: &[usize], feature: usize, total: (usize, usize)) -> Option<(f32, f64)> {
        self.scratch.clear();
        self.scratch
            .extend(idx.iter().map(|&i| (self.data.row(i)[feature], self.genuine[i])));
        self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (t_imp, t_gen) = total;
        let mut l_imp = 0;
        let mut l_gen = 0;
        let mut best: Option<(f32, f64)> = None;
        for k in 0..self.scratch.len() - 1 {
            let (v, g) = self.scratch[k];
            if g {
                l_gen += 1;
            } else {
                l_imp += 1;
            }
            let next = self.scratch[k + 1].0;
            if next <= v {
                continue;
            }
            let imp = gini_sum(l_imp, l_gen) + gini_sum(t_imp - l_imp, t_gen - l_gen);
            if best.is_none_or(|(_, b)| imp < b) {
                let mut thr = v + (next - v) / 2.0;
                if thr >= next {
                    thr = v;
                }
                best = Some((thr, imp));
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut seed::Rng) -> u32 {
        let (imp, gen) = self.counts(idx);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            impostor: imp as u32,
            genuine: gen as u32,
        });
        let stop = imp == 0
            || gen == 0
            || idx.len() < self.params.min_samples_split
            || self.params.max_depth.is_some_and(|d| depth >= d);
        if stop {
            return at as u32;
        }

        let mut features = self.usable.to_vec();
        features.shuffle(rng);
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in features.iter().enumerate() {
            // keep drawing past mtry only while no valid split has been found
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((threshold, impurity)) = self.best_on(idx, f, (imp, gen)) {
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        let Some(best) = best else {
            return at as u32;
        };

        let mut mid = 0;
        for k in 0..idx.len() {
            if self.data.row(idx[k])[best.feature] <= best.threshold {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left,
            right,
        };
        at as u32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    params: ForestParams,
    dim: usize,
    trees: Vec<Tree>,
}

impl ForestModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    /// Fraction of trees voting genuine.
    pub fn score(&self, x: &[f32]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.votes_genuine(x)).count();
        votes as f64 / self.trees.len() as f64
    }

    /// Majority of tree votes; an exact tie goes to impostor.
    pub fn predict(&self, x: &[f32]) -> Label {
        Label::from_bool(self.score(x) > 0.5)
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        let p = &self.params;
        w.u64(p.n_trees as u64);
        w.u64(p.max_features.code());
        w.u64(p.min_samples_split as u64);
        w.u64(p.max_depth.map_or(u64::MAX, |d| d as u64));
        w.u8(p.bootstrap as u8);
        w.u64(p.seed);
        w.u64(self.dim as u64);
        w.len(self.trees.len());
        for t in &self.trees {
            t.encode(w);
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let params = ForestParams {
            n_trees: r.u64()? as usize,
            max_features: MaxFeatures::from_code(r.u64()?),
            min_samples_split: r.u64()? as usize,
            max_depth: match r.u64()? {
                u64::MAX => None,
                d => Some(d as usize),
            },
            bootstrap: r.u8()? != 0,
            seed: r.u64()?,
        };
        let dim = r.u64()? as usize;
        let n = r.len(8)?;
        let trees = (0..n).map(|_| Tree::decode(r, dim)).collect::<Result<Vec<_>>>()?;
        if trees.is_empty() {
            return Err(Error::Format("forest without trees".into()));
        }
        Ok(Self { params, dim, trees })
    }
}

pub fn train_rf(data: &Dataset, params: &ForestParams) -> Result<ForestModel> {
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be >= 1".into()));
    }
    data.require_both_classes()?;
    let n = data.len();
    let dim = data.dim();
    let usable: Vec<usize> = (0..dim)
        .filter(|&d| {
            let first = data.row(0)[d];
            data.rows().any(|x| x[d] != first)
        })
        .collect();
    let mtry = params.max_features.resolve(usable.len());
    let genuine: Vec<bool> = data.labels().iter().map(|l| l.is_genuine()).collect();

    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(params.seed, seed::stream::TREE, t as u64);
            let mut idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                data,
                genuine: genuine.clone(),
                usable: &usable,
                mtry,
                params,
                nodes: Vec::new(),
                scratch: Vec::with_capacity(n),
            };
            b.build(&mut idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel {
        params: params.clone(),
        dim,
        trees,
    })
}

pub const VOTING_MEMBERS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct VotingForestModel {
    members: Vec<ForestModel>,
}

impl VotingForestModel {
    /// Assembles a voting model from five already trained forests of one dimension.
    pub fn from_members(members: Vec<ForestModel>) -> Result<Self> {
        if members.len() != VOTING_MEMBERS {
            return Err(Error::InvalidParameter(format!(
                "a voting forest needs {VOTING_MEMBERS} members, got {}",
                members.len()
            )));
        }
        if let Some(bad) = members.iter().find(|m| m.dim != members[0].dim) {
            return Err(Error::dim_mismatch(members[0].dim, bad.dim));
        }
        Ok(Self { members })
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn members(&self) -> &[ForestModel] {
        &self.members
    }

    /// Mean of the member scores.
    pub fn score(&self, x: &[f32]) -> f64 {
        self.members.iter().map(|m| m.score(x)).sum::<f64>() / self.members.len() as f64
    }

    /// Majority of the member predictions.
    pub fn predict(&self, x: &[f32]) -> Label {
        let yes = self
            .members
            .iter()
            .filter(|m| m.predict(x).is_genuine())
            .count();
        Label::from_bool(2 * yes > self.members.len())
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.len(self.members.len());
        for m in &self.members {
            m.encode(w);
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.len(8)?;
        if n != VOTING_MEMBERS {
            return Err(Error::Format(format!("voting model with {n} members")));
        }
        let members = (0..n).map(|_| ForestModel::decode(r)).collect::<Result<Vec<_>>>()?;
        if members.iter().any(|m| m.dim != members[0].dim) {
            return Err(Error::Format("voting members disagree on dimension".into()));
        }
        Ok(Self { members })
    }
}

pub fn train_voting_rf(data: &Dataset, params: &ForestParams, seeds: [u64; VOTING_MEMBERS]) -> Result<VotingForestModel> {
    for (i, s) in seeds.iter().enumerate() {
        if seeds[..i].contains(s) {
            return Err(Error::SeedCollision(*s));
        }
    }
    let members = seeds
        .iter()
        .map(|&s| {
            train_rf(
                data,
                &ForestParams {
                    seed: s,
                    ..params.clone()
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VotingForestModel { members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn xor_data(n: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::new(3);
        for _ in 0..n {
            let x = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
            d.push(&x, Label::from_bool((x[0] > 0.5) != (x[1] > 0.5))).unwrap();
        }
        d
    }

    #[test]
    fn threshold_rule_is_learned() {
        let mut d = Dataset::new(1);
        for v in [0.1f32, 0.2, 0.3, 0.7, 0.8, 0.9] {
            d.push(&[v], Label::from_bool(v > 0.5)).unwrap();
        }
        let m = train_rf(
            &d,
            &ForestParams {
                bootstrap: false,
                n_trees: 3,
                ..ForestParams::default()
            },
        )
        .unwrap();
        assert_eq!(m.predict(&[0.45]), Label::Impostor);
        assert_eq!(m.predict(&[0.55]), Label::Genuine);
        assert_eq!(m.score(&[0.9]), 1.0);
    }

    #[test]
    fn xor_is_learned() {
        let train = xor_data(400, 1);
        let test = xor_data(200, 2);
        let m = train_rf(&train, &ForestParams::default()).unwrap();
        let ok = (0..test.len())
            .filter(|&i| m.predict(test.row(i)) == test.label(i))
            .count();
        assert!(ok >= 180, "{ok}/200");
    }

    #[test]
    fn same_seed_same_forest() {
        let d = xor_data(100, 3);
        let p = ForestParams {
            n_trees: 10,
            seed: 9,
            ..ForestParams::default()
        };
        assert_eq!(train_rf(&d, &p).unwrap(), train_rf(&d, &p).unwrap());
    }

    #[test]
    fn voting_rejects_repeated_seed() {
        let d = xor_data(50, 4);
        let p = ForestParams {
            n_trees: 3,
            ..ForestParams::default()
        };
        assert!(matches!(
            train_voting_rf(&d, &p, [1, 2, 3, 2, 5]),
            Err(Error::SeedCollision(2))
        ));
        let v = train_voting_rf(&d, &p, [1, 2, 3, 4, 5]).unwrap();
        assert_eq!(v.members().len(), 5);
    }
}
