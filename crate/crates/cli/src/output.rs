//! Comma-delimited artifact files, one per kind, each with a header row.

use std::fmt::Write as _;
use std::path::Path;

use safeplan::planner::{PathPoint, PlanObserver, PlanTree, TreeNode};
use safeplan::safety::BarrierSpec;
use safeplan::tracksim::TrackingReport;

/// Per-node telemetry captured while planning.
#[derive(Debug, Default, Clone)]
pub struct Telemetry {
    pub barrier: Vec<(usize, Vec<f64>)>,
    pub ric: Vec<f64>,
}

impl PlanObserver for Telemetry {
    fn node_added(&mut self, id: usize, _node: &TreeNode, barrier: &[f64]) {
        self.barrier.push((id, barrier.to_vec()));
    }

    fn ric_appended(&mut self, value: f64) {
        self.ric.push(value);
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn tree_csv(tree: &PlanTree) -> String {
    let mut s = String::from("id,parent,x,y,xdot,ydot,stance,cost,info,closed\n");
    for (i, n) in tree.nodes.iter().enumerate() {
        let st = n.state;
        writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{},{}",
            n.parent.map(|p| p.to_string()).unwrap_or_default(),
            num(st.x),
            num(st.y),
            num(st.xdot),
            num(st.ydot),
            n.stance.as_str(),
            num(n.cost),
            num(n.info),
            u8::from(n.closed)
        )
        .unwrap();
    }
    s
}

pub fn path_csv(path: &[PathPoint], barriers: &BarrierSpec) -> String {
    let mut s = String::from("step,node,x,y,xdot,ydot,p_x,p_y,stance,heading_sin,heading_cos,h_min\n");
    for (k, p) in path.iter().enumerate() {
        let st = p.state;
        let h = barriers.min_barrier(st.position());
        writeln!(
            s,
            "{k},{},{},{},{},{},{},{},{},{},{},{}",
            p.node,
            num(st.x),
            num(st.y),
            num(st.xdot),
            num(st.ydot),
            opt(p.input.map(|u| u.p_x)),
            opt(p.input.map(|u| u.p_y)),
            p.stance.as_str(),
            opt(p.heading.map(|h| h.sin)),
            opt(p.heading.map(|h| h.cos)),
            if h.is_finite() { num(h) } else { String::new() }
        )
        .unwrap();
    }
    s
}

pub fn ric_csv(ric: &[f64]) -> String {
    let mut s = String::from("index,ric\n");
    for (i, r) in ric.iter().enumerate() {
        writeln!(s, "{i},{}", num(*r)).unwrap();
    }
    s
}

pub fn barrier_csv(telemetry: &Telemetry) -> String {
    let mut s = String::from("node,obstacle,h\n");
    for (id, hs) in &telemetry.barrier {
        for (j, h) in hs.iter().enumerate() {
            writeln!(s, "{id},{j},{}", num(*h)).unwrap();
        }
    }
    s
}

pub fn tracking_csv(reports: &[TrackingReport]) -> String {
    let mut s = String::from("mode,step,x,y,ly,lx,waypoint_error,foot_error\n");
    for r in reports {
        for (k, st) in r.states.iter().enumerate() {
            writeln!(
                s,
                "{},{k},{},{},{},{},{},{}",
                r.mode.as_str(),
                num(st.x),
                num(st.y),
                num(st.ly),
                num(st.lx),
                num(r.waypoint_errors[k]),
                opt(r.foot_errors.get(k).copied())
            )
            .unwrap();
        }
    }
    s
}

pub fn summary_csv(rows: &[(String, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        writeln!(s, "{k},{v}").unwrap();
    }
    s
}

pub fn write(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    std::fs::write(dir.join(name), contents)
}
