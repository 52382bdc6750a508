//! The univariate hot-deck baseline: each missing cell is filled by a
//! random draw from the observed values of the same variable (restricted
//! to the cell's bracket when one exists), consulting no covariates and
//! treating each variable independently. Restriction synchronization still
//! applies so structurally inapplicable cells stay out of the draw.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data_model::{sync_restricted, Cell, Dataset, Eligibility};
use crate::engine::CompletedTable;
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct HotdeckResult {
    pub table: CompletedTable,
    pub warnings: Vec<String>,
}

pub fn hotdeck_impute(ds: &Dataset, seed: u64) -> Result<HotdeckResult> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut columns = ds.columns().to_vec();
    let mut warnings = Vec::new();

    let depth = ds.restrictions().depth;
    let topo: Vec<usize> = ds.restrictions().restricted_topo().to_vec();
    for pass in 0..=depth + 1 {
        sync_restricted(ds.restrictions(), &mut columns, &topo);
        let mut pending: Vec<usize> = (0..ds.n_variables())
            .filter(|&v| ds.variables()[v].eligibility != Eligibility::Excluded)
            .filter(|&v| columns[v].cells.iter().any(|c| c.is_missing()))
            .collect();
        if pending.is_empty() {
            break;
        }
        if pass > depth {
            return Err(Error::numeric(
                "hot deck left missing cells after resolving restrictions".to_string(),
            ));
        }
        // filters before the variables they gate
        pending.sort_by_key(|&v| {
            (
                topo.iter().position(|&t| t == v).unwrap_or(0),
                v,
            )
        });
        for v in pending {
            let name = &ds.variables()[v].name;
            let donors: Vec<f64> = columns[v]
                .cells
                .iter()
                .filter_map(|c| match c {
                    Cell::Observed(x) => Some(*x),
                    _ => None,
                })
                .collect();
            if donors.is_empty() {
                return Err(Error::validation(format!(
                    "hot deck: empty donor pool for `{name}`"
                )));
            }
            let rows: Vec<usize> = columns[v]
                .cells
                .iter()
                .enumerate()
                .filter(|(_, c)| c.is_missing())
                .map(|(row, _)| row)
                .collect();
            for row in rows {
                let value = crate::engine::donor_draw(
                    &donors,
                    ds.bounds(row, v),
                    &mut rng,
                    &mut warnings,
                    name,
                );
                columns[v].cells[row] = Cell::Imputed(value);
            }
            let downstream: Vec<usize> = ds.restrictions().downstream_of(v).to_vec();
            sync_restricted(ds.restrictions(), &mut columns, &downstream);
        }
    }

    Ok(HotdeckResult {
        table: CompletedTable { columns },
        warnings,
    })
}
