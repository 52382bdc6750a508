//! Built-in synthetic-survey generators. These power the acceptance suite
//! and the `simulate` subcommand: small bivariate fixtures with controlled
//! missingness mechanisms, a nested skip-pattern fixture with brackets, and
//! a wide mixed-type survey for scale runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal, Poisson, StandardNormal};

use crate::data_model::{Cell, ColumnData, Dataset, VariableKind, VariableSpec};
use crate::error::Result;
use crate::transforms::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Mcar,
    /// Missingness probability in `y` follows a logistic curve in `x`.
    MarOnCovariate,
}

/// Bivariate normal (x, y) with correlation `rho`; `x` complete, `y`
/// missing at the target rate under the chosen mechanism.
pub fn bivariate(
    n: usize,
    rho: f64,
    missing: f64,
    mechanism: Mechanism,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let zx: f64 = StandardNormal.sample(&mut rng);
        let zy: f64 = StandardNormal.sample(&mut rng);
        xs.push(zx);
        ys.push(rho * zx + (1.0 - rho * rho).sqrt() * zy);
    }

    let miss_prob: Vec<f64> = match mechanism {
        Mechanism::Mcar => vec![missing; n],
        Mechanism::MarOnCovariate => {
            // Calibrate the intercept so the average missingness hits the
            // target on this sample.
            let slope = 1.5;
            let rate = |a: f64| {
                xs.iter()
                    .map(|&x| 1.0 / (1.0 + (-(a + slope * x)).exp()))
                    .sum::<f64>()
                    / n as f64
            };
            let (mut lo, mut hi) = (-12.0, 12.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if rate(mid) < missing {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let a = 0.5 * (lo + hi);
            xs.iter()
                .map(|&x| 1.0 / (1.0 + (-(a + slope * x)).exp()))
                .collect()
        }
    };

    let x_cells: Vec<Cell> = xs.into_iter().map(Cell::Observed).collect();
    let y_cells: Vec<Cell> = ys
        .into_iter()
        .zip(miss_prob)
        .map(|(y, p)| {
            if rng.gen_range(0.0..1.0) < p {
                Cell::Missing
            } else {
                Cell::Observed(y)
            }
        })
        .collect();

    Dataset::from_parts(
        vec![
            VariableSpec::new("x", VariableKind::Continuous),
            VariableSpec::new("y", VariableKind::Continuous),
        ],
        vec![ColumnData::new(x_cells), ColumnData::new(y_cells)],
    )
}

/// Nested skip-pattern fixture: `owns` gates `value`, `mortgage`, and
/// `second`; `second` gates `second_value`. Some missing `value` cells
/// carry brackets around the hidden true value.
pub fn nested_skip(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut owns = Vec::with_capacity(n);
    let mut value = Vec::with_capacity(n);
    let mut value_bounds = Vec::with_capacity(n);
    let mut mortgage = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    let mut second_value = Vec::with_capacity(n);
    let mut income = Vec::with_capacity(n);

    let home_dist = LogNormal::new(11.5, 0.6).unwrap();
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let inc = (30_000.0 + 20_000.0 * z.exp()).round();
        income.push(Cell::Observed(inc));

        let owner = rng.gen_range(0.0..1.0) < 0.7;
        let owns_missing = rng.gen_range(0.0..1.0) < 0.05;
        owns.push(if owns_missing {
            Cell::Missing
        } else {
            Cell::Observed(if owner { 1.0 } else { 0.0 })
        });

        // A missing filter means the follow-ups were never asked: they are
        // item-missing too, never observed (well-formed skip pattern).
        if owns_missing {
            value.push(Cell::Missing);
            value_bounds.push(None);
            mortgage.push(Cell::Missing);
            second.push(Cell::Missing);
            second_value.push(Cell::Missing);
        } else if owner {
            let true_value = (home_dist.sample(&mut rng) + 100.0 * z).max(10_000.0).round();
            let u: f64 = rng.gen_range(0.0..1.0);
            if u < 0.75 {
                value.push(Cell::Observed(true_value));
                value_bounds.push(None);
            } else if u < 0.88 {
                // bracketed nonresponse around the hidden value
                value.push(Cell::Missing);
                value_bounds.push(Some(((true_value * 0.6).floor(), (true_value * 1.6).ceil())));
            } else {
                value.push(Cell::Missing);
                value_bounds.push(None);
            }

            let has_mortgage = rng.gen_range(0.0..1.0) < 0.65;
            let m_amt = if has_mortgage {
                (true_value * rng.gen_range(0.2..0.8)).round()
            } else {
                0.0
            };
            mortgage.push(if rng.gen_range(0.0..1.0) < 0.10 {
                Cell::Missing
            } else {
                Cell::Observed(m_amt)
            });

            let has_second = rng.gen_range(0.0..1.0) < 0.3;
            let second_missing = rng.gen_range(0.0..1.0) < 0.04;
            second.push(if second_missing {
                Cell::Missing
            } else {
                Cell::Observed(if has_second { 1.0 } else { 0.0 })
            });
            if second_missing {
                second_value.push(Cell::Missing);
            } else if has_second {
                let sv = (home_dist.sample(&mut rng) * 0.5).max(5_000.0).round();
                second_value.push(if rng.gen_range(0.0..1.0) < 0.2 {
                    Cell::Missing
                } else {
                    Cell::Observed(sv)
                });
            } else {
                second_value.push(Cell::NotApplicable);
            }
        } else {
            value.push(Cell::NotApplicable);
            value_bounds.push(None);
            mortgage.push(Cell::NotApplicable);
            second.push(Cell::NotApplicable);
            second_value.push(Cell::NotApplicable);
        }
    }

    let yes_no = || VariableKind::Categorical {
        levels: vec!["no".into(), "yes".into()],
    };
    let mut value_col = ColumnData::new(value);
    value_col.bounds = Some(value_bounds);

    Dataset::from_parts(
        vec![
            VariableSpec::new("income", VariableKind::Continuous)
                .with_transform(Transform::SignedCubeRoot),
            VariableSpec::new("owns", yes_no()),
            VariableSpec::new("value", VariableKind::Continuous)
                .with_transform(Transform::SignedCubeRoot)
                .with_restriction("owns == 'yes'")
                .with_bounds_source("valueL", "valueH"),
            VariableSpec::new("mortgage", VariableKind::Semicontinuous)
                .with_transform(Transform::SignedCubeRoot)
                .with_restriction("owns == 'yes'"),
            VariableSpec::new("second", yes_no()).with_restriction("owns == 'yes'"),
            VariableSpec::new("second_value", VariableKind::Continuous)
                .with_transform(Transform::SignedCubeRoot)
                .with_restriction("second == 'yes'"),
        ],
        vec![
            ColumnData::new(income),
            ColumnData::new(owns),
            value_col,
            ColumnData::new(mortgage),
            ColumnData::new(second),
            ColumnData::new(second_value),
        ],
    )
}

/// Wide mixed-type survey driven by a latent factor, with MCAR missingness
/// at `missing` per incomplete variable. The first variable stays complete.
pub fn wide_survey(rows: usize, cols: usize, missing: f64, seed: u64) -> Result<Dataset> {
    assert!(cols >= 2, "wide_survey needs at least 2 columns");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let factor: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut specs = Vec::with_capacity(cols);
    let mut columns = Vec::with_capacity(cols);
    for j in 0..cols {
        let name = format!("v{j:03}");
        let loading = 0.4 + 0.4 * ((j % 7) as f64 / 7.0);
        match j % 10 {
            // a categorical, a count, and a semicontinuous per block of 10
            3 => {
                let levels = 3 + j % 3;
                let cells: Vec<Cell> = factor
                    .iter()
                    .map(|&f| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let score = loading * f + z;
                        let level = (((score + 2.5) / 5.0 * levels as f64) as usize)
                            .min(levels - 1);
                        Cell::Observed(level as f64)
                    })
                    .collect();
                specs.push(VariableSpec::new(
                    &name,
                    VariableKind::Categorical {
                        levels: (0..levels).map(|l| format!("l{l}")).collect(),
                    },
                ));
                columns.push(ColumnData::new(cells));
            }
            6 => {
                let cells: Vec<Cell> = factor
                    .iter()
                    .map(|&f| {
                        let lambda = (0.3 * loading * f).exp() * 3.0;
                        let v = Poisson::new(lambda.max(1e-6)).unwrap().sample(&mut rng);
                        Cell::Observed(v)
                    })
                    .collect();
                specs.push(VariableSpec::new(&name, VariableKind::Count));
                columns.push(ColumnData::new(cells));
            }
            9 => {
                let cells: Vec<Cell> = factor
                    .iter()
                    .map(|&f| {
                        if rng.gen_range(0.0..1.0) < 0.4 {
                            Cell::Observed(0.0)
                        } else {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            Cell::Observed(((loading * f + 0.6 * z).exp() * 10_000.0).round())
                        }
                    })
                    .collect();
                specs.push(
                    VariableSpec::new(&name, VariableKind::Semicontinuous)
                        .with_transform(Transform::SignedCubeRoot),
                );
                columns.push(ColumnData::new(cells));
            }
            _ => {
                let cells: Vec<Cell> = factor
                    .iter()
                    .map(|&f| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        Cell::Observed(loading * f + (1.0 - loading * loading).sqrt() * z)
                    })
                    .collect();
                specs.push(VariableSpec::new(&name, VariableKind::Continuous));
                columns.push(ColumnData::new(cells));
            }
        }
        if j > 0 {
            for cell in &mut columns[j].cells {
                if rng.gen_range(0.0..1.0) < missing {
                    *cell = Cell::Missing;
                }
            }
        }
    }
    Dataset::from_parts(specs, columns)
}

/// Lognormal(mu, sigma) sample, for skewness fixtures.
pub fn lognormal_sample(n: usize, mu: f64, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dist = LogNormal::new(mu, sigma).unwrap();
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}
