//! Seeded tabular fixtures shared by the verification suites.

use crate::dice::{DiceBatch, DiceConfig, DiceDiagnostics, DiceError, DiceState};
use crate::envs::{random_mdp, TabularEnv, TabularMdp};
use crate::numcore::{Matrix, Rng};
use crate::oracle::{policy_table, ExactQuantities};
use crate::policies::SoftmaxPolicy;

/// One logged tabular step `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularSample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Logged data from a fixed behavior policy on a random MDP, a fixed target
/// policy, and the exact occupancy quantities against the empirical data
/// distribution.
#[derive(Debug, Clone)]
pub struct TabularDiceFixture {
    pub env: TabularEnv,
    pub behavior: Matrix,
    pub target: Matrix,
    pub samples: Vec<TabularSample>,
    pub exact: ExactQuantities,
}

impl TabularDiceFixture {
    /// Uniform behavior policy, softmax target policy with standard-normal
    /// logits, episodes of `horizon` steps from the initial distribution.
    pub fn new(seed: u64, n_states: usize, n_actions: usize, buffer_size: usize, horizon: usize) -> Self {
        let mut rng = Rng::new(seed);
        let mdp = random_mdp(&mut rng, n_states, n_actions, 1.0);
        let behavior = Matrix::from_elem((n_states, n_actions), 1.0 / n_actions as f64);
        let target = policy_table(&SoftmaxPolicy::random(n_states, n_actions, 1.0, &mut rng));
        let samples = collect(&mdp, &behavior, buffer_size, horizon, &mut rng);
        let d_d = empirical_distribution(&samples, n_states, n_actions);
        let exact = ExactQuantities::compute(&mdp, &target, &d_d).expect("uniform behavior covers every pair");
        Self {
            env: TabularEnv { mdp, horizon },
            behavior,
            target,
            samples,
            exact,
        }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.env.mdp
    }

    /// `[one_hot(s), center of action bin a]`, the encoding the trainer
    /// feeds its networks on tabular environments.
    pub fn features(&self, s: usize, a: usize) -> Vec<f64> {
        let mut v = self.env.one_hot(s);
        let (lo, hi) = self.env.bin_edges(a);
        v.push(0.5 * (lo + hi));
        v
    }

    fn feature_matrix(&self, pairs: impl ExactSizeIterator<Item = (usize, usize)>) -> Matrix {
        let width = self.mdp().n_states() + 1;
        let n = pairs.len();
        let flat: Vec<f64> = pairs.flat_map(|(s, a)| self.features(s, a)).collect();
        Matrix::from_shape_vec((n, width), flat).unwrap()
    }

    /// A DICE batch over the given sample indices with `a' ~ π_T(s')`.
    pub fn batch(&self, indices: &[usize], rng: &mut Rng) -> DiceBatch {
        let picked: Vec<&TabularSample> = indices.iter().map(|&i| &self.samples[i]).collect();
        let next: Vec<(usize, usize)> = picked
            .iter()
            .map(|x| (x.next_state, rng.categorical(self.target.row(x.next_state).as_slice().unwrap())))
            .collect();
        DiceBatch {
            sa: self.feature_matrix(picked.iter().map(|x| (x.state, x.action))),
            next_sa: self.feature_matrix(next.into_iter()),
            rewards: Matrix::from_shape_fn((picked.len(), 1), |(i, _)| picked[i].reward),
        }
    }

    /// Every (s, a) feature row, row-major over states.
    pub fn all_pairs(&self) -> Matrix {
        let na = self.mdp().n_actions();
        self.feature_matrix((0..self.mdp().n_states() * na).map(|i| (i / na, i % na)))
    }

    /// Current ζ network as an `[n_states, n_actions]` table.
    pub fn zeta_table(&self, dice: &DiceState) -> Matrix {
        let z = dice.zeta_values(&self.all_pairs());
        Matrix::from_shape_vec((self.mdp().n_states(), self.mdp().n_actions()), z).unwrap()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|x| x.reward).collect()
    }

    /// ζ at every logged sample.
    pub fn zeta_per_sample(&self, table: &Matrix) -> Vec<f64> {
        self.samples.iter().map(|x| table[[x.state, x.action]]).collect()
    }
}

fn collect(mdp: &TabularMdp, policy: &Matrix, n: usize, horizon: usize, rng: &mut Rng) -> Vec<TabularSample> {
    let mut out = Vec::with_capacity(n);
    let mut s = mdp.reset(rng);
    let mut t = 0;
    while out.len() < n {
        let a = rng.categorical(policy.row(s).as_slice().unwrap());
        let (s2, r) = mdp.step(s, a, rng).expect("indices come from the MDP");
        out.push(TabularSample {
            state: s,
            action: a,
            reward: r,
            next_state: s2,
        });
        t += 1;
        if t == horizon {
            s = mdp.reset(rng);
            t = 0;
        } else {
            s = s2;
        }
    }
    out
}

pub fn empirical_distribution(samples: &[TabularSample], n_states: usize, n_actions: usize) -> Matrix {
    let mut d = Matrix::zeros((n_states, n_actions));
    for x in samples {
        d[[x.state, x.action]] += 1.0;
    }
    d / samples.len() as f64
}

/// Runs `steps` DICE updates on uniformly drawn minibatches, soft-updating ν'
/// after each one. `trace` is called after every update.
pub fn train_tabular_dice(
    fixture: &TabularDiceFixture,
    config: DiceConfig,
    hidden: &[usize],
    steps: usize,
    batch_size: usize,
    tau: f64,
    seed: u64,
    mut trace: impl FnMut(usize, &DiceState, &DiceDiagnostics),
) -> Result<DiceState, DiceError> {
    let mut rng = Rng::new(seed);
    let mut dice = DiceState::new(fixture.mdp().n_states() + 1, hidden, config, &mut rng.derive(1))?;
    let n = fixture.samples.len();
    for step in 0..steps {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.below(n)).collect();
        let batch = fixture.batch(&idx, &mut rng);
        let diag = dice.update(&batch)?;
        dice.soft_update_target(tau);
        trace(step, &dice, &diag);
    }
    Ok(dice)
}
