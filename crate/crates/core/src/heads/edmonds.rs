//! Maximum spanning arborescence (Chu-Liu/Edmonds).

/// Best-scoring tree over words `1..=n` rooted at node 0.
///
/// `scores[h][d]` is the score of head `h ∈ 0..=n` for dependent `d ∈ 1..=n`
/// (column 0 is ignored); `-∞` forbids an arc. Returns `heads` with
/// `heads[d - 1]` the head of word `d`. The root may take several children.
/// Among equally good incoming arcs the lower head index wins.
pub fn max_arborescence(scores: &[Vec<f64>]) -> Vec<usize> {
    let m = scores.len();
    if m <= 1 {
        return Vec::new();
    }
    let mut w = scores.to_vec();
    for (i, row) in w.iter_mut().enumerate() {
        row[0] = f64::NEG_INFINITY;
        row[i] = f64::NEG_INFINITY;
    }
    let heads = solve(&w);
    heads[1..].to_vec()
}

fn argmax_head(w: &[Vec<f64>], d: usize) -> usize {
    let mut best = 0;
    for h in 1..w.len() {
        if w[h][d] > w[best][d] {
            best = h;
        }
    }
    best
}

/// Node of a cycle among the greedy head choices, if one exists.
fn find_cycle(head: &[usize]) -> Option<Vec<usize>> {
    let m = head.len();
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; m];
    state[0] = 2;
    for start in 1..m {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = head[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&x| x == v).expect("v is on the path");
            let mut cycle = path[pos..].to_vec();
            cycle.sort_unstable();
            return Some(cycle);
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// `w[h][d]` over nodes `0..m`, column 0 and the diagonal `-∞`. Returns a
/// head per node (entry 0 unused).
fn solve(w: &[Vec<f64>]) -> Vec<usize> {
    let m = w.len();
    let mut head: Vec<usize> = (0..m).map(|d| if d == 0 { 0 } else { argmax_head(w, d) }).collect();
    let Some(cycle) = find_cycle(&head) else {
        return head;
    };

    let in_cycle: Vec<bool> = (0..m).map(|v| cycle.binary_search(&v).is_ok()).collect();
    // contracted graph: outside nodes keep their relative order, the cycle
    // becomes the last node
    let outside: Vec<usize> = (0..m).filter(|&v| !in_cycle[v]).collect();
    let c = outside.len();
    let mut new_id = vec![c; m];
    for (i, &v) in outside.iter().enumerate() {
        new_id[v] = i;
    }
    let mut cw = vec![vec![f64::NEG_INFINITY; c + 1]; c + 1];
    // for arcs into the cycle: which cycle node they enter
    let mut enter = vec![cycle[0]; c + 1];
    // for arcs out of the cycle: which cycle node they leave from
    let mut leave = vec![cycle[0]; c + 1];
    for &u in &outside {
        for &v in &outside {
            cw[new_id[u]][new_id[v]] = w[u][v];
        }
        let mut best = f64::NEG_INFINITY;
        for &v in &cycle {
            let s = w[u][v] - w[head[v]][v];
            if s > best {
                best = s;
                enter[new_id[u]] = v;
            }
        }
        cw[new_id[u]][c] = best;
    }
    for &v in &outside {
        let mut best = f64::NEG_INFINITY;
        for &u in &cycle {
            if w[u][v] > best {
                best = w[u][v];
                leave[new_id[v]] = u;
            }
        }
        cw[c][new_id[v]] = best;
    }
    for row in cw.iter_mut() {
        row[0] = f64::NEG_INFINITY;
    }

    let sub = solve(&cw);
    for &v in &outside {
        if v == 0 {
            continue;
        }
        let h = sub[new_id[v]];
        head[v] = if h == c { leave[new_id[v]] } else { outside[h] };
    }
    let entry_from = sub[c];
    let entered = enter[entry_from];
    head[entered] = outside[entry_from];
    head
}

/// Sum of `scores[heads[d-1]][d]`.
pub fn tree_score(scores: &[Vec<f64>], heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(i, &h)| scores[h][i + 1]).sum()
}

/// Whether `heads` (1-based words, 0 = ROOT) forms a tree rooted at 0.
pub fn is_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    if heads.iter().enumerate().any(|(i, &h)| h > n || h == i + 1) {
        return false;
    }
    (1..=n).all(|start| {
        let mut v = start;
        for _ in 0..=n {
            if v == 0 {
                return true;
            }
            v = heads[v - 1];
        }
        false
    })
}
