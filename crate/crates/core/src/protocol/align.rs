use std::collections::{BTreeSet, HashMap};

use crate::{Error, Result};

/// Plain sorted-set intersection standing in for PSI.
///
/// Returns, for each input list, the positions of the ids in the global
/// intersection, ordered by ascending id, so row `r` of every map refers to
/// the same sample.
pub fn align_ids(id_lists: &[Vec<u64>]) -> Result<Vec<Vec<usize>>> {
    if id_lists.is_empty() {
        return Err(Error::Alignment("no id lists".into()));
    }
    let mut positions: Vec<HashMap<u64, usize>> = Vec::with_capacity(id_lists.len());
    for (p, list) in id_lists.iter().enumerate() {
        let mut map = HashMap::with_capacity(list.len());
        for (i, &id) in list.iter().enumerate() {
            if map.insert(id, i).is_some() {
                return Err(Error::Contract(format!("duplicate id {id} in list {p}")));
            }
        }
        positions.push(map);
    }
    let common: BTreeSet<u64> = id_lists[0]
        .iter()
        .copied()
        .filter(|id| positions[1..].iter().all(|m| m.contains_key(id)))
        .collect();
    if common.is_empty() {
        return Err(Error::Alignment("empty id intersection".into()));
    }
    Ok(positions
        .iter()
        .map(|m| common.iter().map(|id| m[id]).collect())
        .collect())
}
