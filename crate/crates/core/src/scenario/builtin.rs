use super::ScenarioConfig;
use crate::swarm::{AgentSpec, EstimatorConfig, NonCooperativeAgent, Waypoint};

/// Name and one-line description of every built-in scenario.
pub const BUILTINS: &[(&str, &str)] = &[
    ("formation-swap", "9 agents on a 2x5 grid with one free spot; every 5 s one agent relocates to it, for 60 s"),
    ("team-swap", "two lines of five agents 5 m apart swap sides and swap back"),
    ("intruder", "8-agent 2x4 formation crossed twice by a scripted non-cooperative vehicle at 0.8 m/s"),
    ("head-on", "two agents 3 m apart exchange positions"),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(n, _)| *n)
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    let mut config = match name {
        "formation-swap" => formation_swap(),
        "team-swap" => team_swap(),
        "intruder" => intruder(),
        "head-on" => head_on(),
        _ => return None,
    };
    config.description = BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, d)| d.to_string()).unwrap_or_default();
    Some(config)
}

const ALTITUDE: f64 = 1.0;

fn wp(t: f64, p: [f64; 3]) -> Waypoint<f64> {
    Waypoint { t, p }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

fn formation_swap() -> ScenarioConfig {
    let spots: Vec<[f64; 3]> = (0..10).map(|k| [(k % 5) as f64, (k / 5) as f64, ALTITUDE]).collect();
    let mut occupant: Vec<Option<usize>> = (0..10).map(|k| (k < 9).then_some(k)).collect();
    let mut schedules: Vec<Vec<Waypoint<f64>>> = vec![Vec::new(); 9];
    let mut empty = 9;
    let mut last_mover = None;
    // The agent farthest from the free spot moves, never the same one twice in a row.
    for step in 0..12 {
        let t = 1.0 + 5.0 * step as f64;
        let (from, agent) = (0..10)
            .filter_map(|s| occupant[s].map(|a| (s, a)))
            .filter(|&(_, a)| Some(a) != last_mover)
            .max_by(|&(s1, _), &(s2, _)| {
                dist(spots[s1], spots[empty]).total_cmp(&dist(spots[s2], spots[empty])).then(s2.cmp(&s1))
            })
            .expect("nine occupied spots");
        schedules[agent].push(wp(t, spots[empty]));
        occupant[empty] = Some(agent);
        occupant[from] = None;
        empty = from;
        last_mover = Some(agent);
    }
    let agents = schedules
        .into_iter()
        .enumerate()
        .map(|(id, schedule)| AgentSpec { id, start: spots[id], schedule })
        .collect();
    ScenarioConfig::new("formation-swap", 66.0, agents)
}

fn team_swap() -> ScenarioConfig {
    // The second team flies 0.1 m higher so no pair is exactly head-on.
    let (xa, xb, za, zb) = (0.0, 5.0, ALTITUDE, ALTITUDE + 0.1);
    let mut agents = Vec::new();
    for i in 0..5 {
        let y = i as f64 - 2.0;
        let (a, b) = ([xa, y, za], [xb, y, zb]);
        let (a_far, b_far) = ([xb, y, za], [xa, y, zb]);
        agents.push(AgentSpec { id: i, start: a, schedule: vec![wp(1.0, a_far), wp(11.0, a)] });
        agents.push(AgentSpec { id: 5 + i, start: b, schedule: vec![wp(1.0, b_far), wp(11.0, b)] });
    }
    agents.sort_by_key(|a| a.id);
    ScenarioConfig::new("team-swap", 22.0, agents)
}

fn intruder() -> ScenarioConfig {
    let agents = (0..8)
        .map(|k| AgentSpec { id: k, start: [(k % 4) as f64, (k / 4) as f64, ALTITUDE], schedule: vec![] })
        .collect();
    let speed = 0.8;
    let a = [-3.0, 0.5, ALTITUDE];
    let b = [6.0, 0.5, ALTITUDE];
    let c = [6.0, 0.0, ALTITUDE];
    let d = [-3.0, 0.0, ALTITUDE];
    // Down the aisle between the rows, then straight along the first row.
    let mut t = 2.0;
    let mut script = vec![wp(0.0, a), wp(t, a)];
    for (from, to, hold) in [(a, b, 2.0), (b, c, 0.0), (c, d, 0.0)] {
        t += dist(from, to) / speed;
        script.push(wp(t, to));
        if hold > 0.0 {
            t += hold;
            script.push(wp(t, to));
        }
    }
    let duration = (t + 4.0).ceil();
    let mut config = ScenarioConfig::new("intruder", duration, agents);
    config.non_cooperative = vec![NonCooperativeAgent { id: 100, script, radius: 0.4 }];
    config.estimator = EstimatorConfig::mocap();
    config
}

fn head_on() -> ScenarioConfig {
    let (a, b) = ([0.0, 0.0, ALTITUDE], [3.0, 0.0, ALTITUDE]);
    let agents = vec![
        AgentSpec { id: 0, start: a, schedule: vec![wp(0.0, b)] },
        AgentSpec { id: 1, start: b, schedule: vec![wp(0.0, a)] },
    ];
    ScenarioConfig::new("head-on", 15.0, agents)
}
