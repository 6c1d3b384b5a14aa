//! Brute-force optimal-transport oracle: the 1-D Wasserstein-1 distance
//! computed as a transportation LP via successive-shortest-path min-cost
//! flow on integer masses. Deliberately ignorant of the 1-D structure the
//! fast implementation exploits.

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct Flow {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Flow {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
    }

    /// Sends `amount` units from `s` to `t`, returning total cost.
    /// Successive shortest paths with Johnson potentials: reduced costs stay
    /// nonnegative (tiny float negatives clamped), so plain Dijkstra applies
    /// and predecessor chains cannot cycle.
    fn min_cost_flow(&mut self, s: usize, t: usize, mut amount: i64) -> f64 {
        let n = self.adj.len();
        let mut potential = vec![0.0f64; n];
        let mut total = 0.0;
        while amount > 0 {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev_edge = vec![usize::MAX; n];
            let mut done = vec![false; n];
            dist[s] = 0.0;
            for _ in 0..n {
                let mut u = usize::MAX;
                let mut best = f64::INFINITY;
                for v in 0..n {
                    if !done[v] && dist[v] < best {
                        best = dist[v];
                        u = v;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                for &ei in &self.adj[u] {
                    let e = &self.edges[ei];
                    if e.cap <= 0 || done[e.to] {
                        continue;
                    }
                    let reduced = (e.cost + potential[u] - potential[e.to]).max(0.0);
                    if dist[u] + reduced < dist[e.to] {
                        dist[e.to] = dist[u] + reduced;
                        prev_edge[e.to] = ei;
                    }
                }
            }
            assert!(dist[t].is_finite(), "transport LP infeasible");
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            // Bottleneck along the path, then apply.
            let mut bottleneck = amount;
            let mut v = t;
            while v != s {
                let ei = prev_edge[v];
                bottleneck = bottleneck.min(self.edges[ei].cap);
                v = self.edges[ei ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let ei = prev_edge[v];
                self.edges[ei].cap -= bottleneck;
                self.edges[ei ^ 1].cap += bottleneck;
                total += bottleneck as f64 * self.edges[ei].cost;
                v = self.edges[ei ^ 1].to;
            }
            amount -= bottleneck;
        }
        total
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Wasserstein-1 between empirical distributions by transportation LP.
pub fn transport_lp(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let l = (n as u64 / gcd(n as u64, m as u64)) * m as u64;
    let supply = (l / n as u64) as i64;
    let demand = (l / m as u64) as i64;

    let source = 0;
    let sink = n + m + 1;
    let mut flow = Flow::new(n + m + 2);
    for (i, _) in a.iter().enumerate() {
        flow.add(source, 1 + i, supply, 0.0);
    }
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            flow.add(1 + i, 1 + n + j, supply, (av - bv).abs());
        }
    }
    for (j, _) in b.iter().enumerate() {
        flow.add(1 + n + j, sink, demand, 0.0);
    }
    let cost = flow.min_cost_flow(source, sink, l as i64);
    cost / l as f64
}
