//! Depth-first spanning plan shared by the SMILES and pattern writers.

use super::mol::Ligand;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RingMark {
    pub digit: u32,
    pub bond: usize,
    pub other: usize,
    pub opening: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Step {
    Atom {
        atom: usize,
        /// `(parent atom, bond index)` for every atom but a component root.
        parent: Option<(usize, usize)>,
        rings: Vec<RingMark>,
    },
    Open,
    Close,
    Dot,
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub steps: Vec<Step>,
    parent: Vec<Option<usize>>,
    ring_partners: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Plan {
    /// Ligands of `atom` in the order a reader of the written string meets them.
    pub fn ligand_order(&self, atom: usize, has_hydrogen: bool) -> Vec<Ligand> {
        let mut out = Vec::new();
        if let Some(p) = self.parent[atom] {
            out.push(Ligand::Atom(p));
        }
        if has_hydrogen {
            out.push(Ligand::Hydrogen);
        }
        out.extend(self.ring_partners[atom].iter().map(|&o| Ligand::Atom(o)));
        out.extend(self.children[atom].iter().map(|&c| Ligand::Atom(c)));
        out
    }
}

/// Builds the traversal. `adjacency[i]` lists `(neighbour, edge id)`; lower
/// `ranks` are visited first.
pub(crate) fn plan_traversal(adjacency: &[Vec<(usize, usize)>], ranks: &[usize]) -> Plan {
    let n = adjacency.len();
    assert_eq!(ranks.len(), n, "one rank per atom");
    let edge_count = adjacency
        .iter()
        .flat_map(|l| l.iter().map(|(_, e)| *e + 1))
        .max()
        .unwrap_or(0);

    let sorted_nbrs: Vec<Vec<(usize, usize)>> = adjacency
        .iter()
        .map(|l| {
            let mut l = l.clone();
            l.sort_by_key(|(v, _)| ranks[*v]);
            l
        })
        .collect();

    let mut visited = vec![false; n];
    let mut visit_index = vec![usize::MAX; n];
    let mut edge_used = vec![false; edge_count];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    // (edge, partner) lists
    let mut ring_open: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut ring_close: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];

    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by_key(|&i| ranks[i]);
    let mut roots = Vec::new();
    let mut counter = 0;
    for &start in &by_rank {
        if visited[start] {
            continue;
        }
        roots.push(start);
        // iterative DFS: stack of (atom, next neighbour position)
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        visited[start] = true;
        visit_index[start] = counter;
        counter += 1;
        while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
            if *pos >= sorted_nbrs[u].len() {
                stack.pop();
                continue;
            }
            let (v, e) = sorted_nbrs[u][*pos];
            *pos += 1;
            if edge_used[e] {
                continue;
            }
            edge_used[e] = true;
            if visited[v] {
                ring_open[v].push((e, u));
                ring_close[u].push((e, v));
            } else {
                visited[v] = true;
                visit_index[v] = counter;
                counter += 1;
                parent[v] = Some((u, e));
                children[u].push(v);
                stack.push((v, 0));
            }
        }
    }

    for list in ring_open.iter_mut() {
        list.sort_by_key(|(_, partner)| visit_index[*partner]);
    }
    for list in ring_close.iter_mut() {
        list.sort_by_key(|(_, partner)| visit_index[*partner]);
    }

    let mut steps = Vec::new();
    let mut digits_in_use: Vec<Option<usize>> = vec![None; 100];
    let mut digit_of_edge = std::collections::HashMap::new();
    let mut ring_partners: Vec<Vec<usize>> = vec![Vec::new(); n];

    for (ci, &root) in roots.iter().enumerate() {
        if ci > 0 {
            steps.push(Step::Dot);
        }
        // explicit stack of actions to avoid recursion
        enum Action {
            Visit(usize),
            Emit(Step),
        }
        let mut todo = vec![Action::Visit(root)];
        while let Some(action) = todo.pop() {
            let u = match action {
                Action::Emit(s) => {
                    steps.push(s);
                    continue;
                }
                Action::Visit(u) => u,
            };
            let mut rings = Vec::new();
            let mut released = Vec::new();
            for &(e, partner) in &ring_close[u] {
                let d: u32 = digit_of_edge[&e];
                rings.push(RingMark {
                    digit: d,
                    bond: e,
                    other: partner,
                    opening: false,
                });
                ring_partners[u].push(partner);
                released.push(d);
            }
            for &(e, partner) in &ring_open[u] {
                let d = (1..100)
                    .find(|&d| digits_in_use[d].is_none())
                    .expect("fewer than 99 simultaneously open rings");
                digits_in_use[d] = Some(e);
                digit_of_edge.insert(e, d as u32);
                rings.push(RingMark {
                    digit: d as u32,
                    bond: e,
                    other: partner,
                    opening: true,
                });
                ring_partners[u].push(partner);
            }
            for d in released {
                digits_in_use[d as usize] = None;
            }
            steps.push(Step::Atom {
                atom: u,
                parent: parent[u],
                rings,
            });
            let kids = &children[u];
            // push in reverse so the first child is processed first
            for (k, &c) in kids.iter().enumerate().rev() {
                let last = k + 1 == kids.len();
                if last {
                    todo.push(Action::Visit(c));
                } else {
                    todo.push(Action::Emit(Step::Close));
                    todo.push(Action::Visit(c));
                    todo.push(Action::Emit(Step::Open));
                }
            }
        }
    }

    Plan {
        steps,
        parent: parent.iter().map(|p| p.map(|(a, _)| a)).collect(),
        ring_partners,
        children,
    }
}
