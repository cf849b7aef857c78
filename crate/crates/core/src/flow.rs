//! Dinic maximum flow with real capacities, residual reachability, and path
//! decomposition of the resulting flow.

use std::collections::VecDeque;

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    cap: f64,
    flow: f64,
}

#[derive(Clone, Debug)]
pub struct FlowNetwork {
    adj: Vec<Vec<usize>>,
    arcs: Vec<Arc>,
    eps: f64,
}

impl FlowNetwork {
    /// `eps` is the residual capacity treated as zero.
    pub fn new(nodes: usize, eps: f64) -> Self {
        FlowNetwork { adj: vec![Vec::new(); nodes], arcs: Vec::new(), eps }
    }

    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to: v, cap, flow: 0.0 });
        self.arcs.push(Arc { to: u, cap: 0.0, flow: 0.0 });
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
        id
    }

    fn residual(&self, e: usize) -> f64 {
        self.arcs[e].cap - self.arcs[e].flow
    }

    fn levels(&self, s: usize) -> Vec<i64> {
        let mut level = vec![-1; self.adj.len()];
        let mut q = VecDeque::new();
        level[s] = 0;
        q.push_back(s);
        while let Some(u) = q.pop_front() {
            for &e in &self.adj[u] {
                let v = self.arcs[e].to;
                if level[v] < 0 && self.residual(e) > self.eps {
                    level[v] = level[u] + 1;
                    q.push_back(v);
                }
            }
        }
        level
    }

    fn push(&mut self, u: usize, t: usize, limit: f64, level: &[i64], it: &mut [usize]) -> f64 {
        if u == t {
            return limit;
        }
        while it[u] < self.adj[u].len() {
            let e = self.adj[u][it[u]];
            let v = self.arcs[e].to;
            let r = self.residual(e);
            if r > self.eps && level[v] == level[u] + 1 {
                let got = self.push(v, t, limit.min(r), level, it);
                if got > 0.0 {
                    self.arcs[e].flow += got;
                    self.arcs[e ^ 1].flow -= got;
                    return got;
                }
            }
            it[u] += 1;
        }
        0.0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        loop {
            let level = self.levels(s);
            if level[t] < 0 {
                return total;
            }
            let mut it = vec![0; self.adj.len()];
            loop {
                let f = self.push(s, t, f64::INFINITY, &level, &mut it);
                if f <= 0.0 {
                    break;
                }
                total += f;
            }
        }
    }

    /// Nodes reachable from `s` in the residual graph.
    pub fn reachable(&self, s: usize) -> Vec<bool> {
        self.levels(s).iter().map(|&l| l >= 0).collect()
    }

    pub fn edge_flow(&self, id: usize) -> f64 {
        self.arcs[id].flow
    }

    /// Decompose the current `s`-`t` flow into paths `(nodes, amount)`.
    pub fn decompose(&self, s: usize, t: usize) -> Vec<(Vec<usize>, f64)> {
        let mut flow: Vec<f64> = self.arcs.iter().map(|a| a.flow.max(0.0)).collect();
        for (i, f) in flow.iter_mut().enumerate() {
            if i % 2 == 1 {
                *f = 0.0;
            }
        }
        let mut paths = Vec::new();
        loop {
            // Follow positive-flow arcs greedily from s; the flow is acyclic for our networks.
            let mut path = vec![s];
            let mut arcs = Vec::new();
            let mut u = s;
            let mut seen = vec![false; self.adj.len()];
            seen[s] = true;
            while u != t {
                let next = self.adj[u].iter().copied().find(|&e| flow[e] > self.eps && !seen[self.arcs[e].to]);
                match next {
                    Some(e) => {
                        arcs.push(e);
                        u = self.arcs[e].to;
                        seen[u] = true;
                        path.push(u);
                    }
                    None => break,
                }
            }
            if u != t {
                if arcs.is_empty() {
                    return paths;
                }
                // Dead end: drop the stranded flow on the last arc.
                let e = *arcs.last().unwrap();
                flow[e] = 0.0;
                continue;
            }
            let amount = arcs.iter().map(|&e| flow[e]).fold(f64::INFINITY, f64::min);
            for &e in &arcs {
                flow[e] -= amount;
            }
            paths.push((path, amount));
        }
    }
}
