use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::exec::AnswerKey;
use super::Candidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot vote over an empty candidate pool")]
pub struct EmptyPool;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    /// Index of the winner in the pool.
    pub index: usize,
    /// Members of the winning answer group.
    pub group_size: usize,
    /// Candidates that returned rows and entered the vote.
    pub survivors: usize,
    /// No candidate returned rows; the winner is a fallback.
    pub fallback: bool,
}

/// Self-consistency vote.
///
/// Candidates that failed or returned nothing are excluded. Survivors are
/// grouped by answer; the largest group wins, ties going to the group whose
/// first member comes earliest. Within that group the fastest candidate wins,
/// then the earliest.
pub fn vote(pool: &[Candidate]) -> Result<VoteResult, EmptyPool> {
    if pool.is_empty() {
        return Err(EmptyPool);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_answer: HashMap<AnswerKey, usize> = HashMap::new();
    for (i, c) in pool.iter().enumerate() {
        let Some(outcome) = c.outcome.as_ref().filter(|o| o.is_healthy()) else {
            continue;
        };
        let key = outcome.answer().expect("healthy outcomes carry rows");
        let g = *by_answer.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let survivors = groups.iter().map(Vec::len).sum();
    // Groups are in order of first member, so the first maximum wins ties.
    let best = groups
        .iter()
        .fold(None::<&Vec<usize>>, |acc, g| match acc {
            Some(a) if a.len() >= g.len() => Some(a),
            _ => Some(g),
        });
    if let Some(group) = best {
        let index = *group
            .iter()
            .min_by_key(|&&i| (pool[i].outcome.as_ref().map(|o| o.elapsed), i))
            .expect("groups are non-empty");
        return Ok(VoteResult {
            index,
            group_size: group.len(),
            survivors,
            fallback: false,
        });
    }
    let index = pool
        .iter()
        .position(|c| c.outcome.as_ref().is_some_and(|o| o.rows().is_some()))
        .unwrap_or(0);
    Ok(VoteResult {
        index,
        group_size: 0,
        survivors: 0,
        fallback: true,
    })
}
