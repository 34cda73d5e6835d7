use std::collections::HashMap;

use super::FeatureError;
use crate::graph::{Direction, Graph, NodeKind};
use crate::table::UserFeatures;

/// Value of a neighbor average for a user with no (known) neighbors.
pub const MISSING: f64 = f64::NAN;

/// Mean of each requested column over every user's neighborhood.
///
/// On user-to-user graphs the neighborhood is the set of adjacent users in
/// either direction; on user-entity graphs it is the set of other users
/// sharing at least one entity. Averages are unweighted over distinct
/// neighbors. Users without neighbors (or absent from `g`) get [`MISSING`].
/// Returns one vector per column, aligned with `users.keys`.
pub fn neighbor_feature_average(
    g: &Graph,
    users: UserFeatures<'_>,
    columns: &[&str],
) -> Result<Vec<Vec<f64>>, FeatureError> {
    let sources: Vec<&[f64]> = columns.iter().map(|c| users.features.column_by_name(c)).collect::<Result<_, _>>()?;
    let row_of: HashMap<&str, usize> = users.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();

    let projected;
    let user_graph = if g.is_bipartite() {
        projected = g.bipartite_user_projection()?;
        &projected
    } else {
        g
    };

    let mut out = vec![vec![MISSING; users.keys.len()]; columns.len()];
    let mut rows: Vec<usize> = Vec::new();
    for (i, key) in users.keys.iter().enumerate() {
        let Some(v) = user_graph.lookup(NodeKind::User, key) else { continue };
        rows.clear();
        rows.extend(
            user_graph
                .neighbors(v, Direction::All)?
                .into_iter()
                .filter_map(|(u, _)| row_of.get(user_graph.key(u)).copied()),
        );
        if rows.is_empty() {
            continue;
        }
        for (dst, src) in out.iter_mut().zip(&sources) {
            dst[i] = rows.iter().map(|&r| src[r]).sum::<f64>() / rows.len() as f64;
        }
    }
    Ok(out)
}
