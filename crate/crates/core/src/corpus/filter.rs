use std::collections::HashMap;

use super::{Interaction, UserSplit};
use crate::error::{Error, Result};

/// Drops users and items with fewer than `k` interactions, repeating until no
/// more records are removed. The survivors keep their input order.
pub fn k_core_filter(interactions: &[Interaction], k: usize) -> Vec<Interaction> {
    let mut alive = vec![true; interactions.len()];
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for (it, _) in interactions.iter().zip(&alive).filter(|(_, &a)| a) {
            *users.entry(&it.user_id).or_default() += 1;
            *items.entry(&it.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (it, a) in interactions.iter().zip(alive.iter_mut()) {
            if *a && (users[it.user_id.as_str()] < k || items[it.item_id.as_str()] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    interactions.iter().zip(&alive).filter(|(_, &a)| a).map(|(it, _)| it.clone()).collect()
}

pub fn five_core_filter(interactions: &[Interaction]) -> Vec<Interaction> {
    k_core_filter(interactions, 5)
}

/// Last item is the test target, second to last the validation target.
pub fn leave_one_out_split(user_id: &str, sequence: &[usize]) -> Result<UserSplit> {
    let n = sequence.len();
    if n < 3 {
        return Err(Error::SequenceTooShort { user: user_id.to_string(), len: n });
    }
    Ok(UserSplit {
        user_id: user_id.to_string(),
        train: sequence[..n - 2].to_vec(),
        valid: sequence[n - 2],
        test: sequence[n - 1],
    })
}
