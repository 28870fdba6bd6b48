use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::seeds;

/// Relation vocabulary: (label, question form, bare verb for "What does X _?").
/// Each label is functional per source entity.
pub const LABELS: [(&str, &str); 8] = [
    ("owns", "does {} own"),
    ("founded", "did {} found"),
    ("employs", "does {} employ"),
    ("supplies", "does {} supply"),
    ("mentors", "does {} mentor"),
    ("hosts", "does {} host"),
    ("funds", "does {} fund"),
    ("acquired", "did {} acquire"),
];

pub const ATTRIBUTE_KEYS: [&str; 4] = ["color", "region", "year", "kind"];
const COLORS: [&str; 8] = ["red", "blue", "green", "amber", "violet", "teal", "black", "white"];
const REGIONS: [&str; 6] = ["north", "south", "east", "west", "coast", "highland"];
const KINDS: [&str; 6] = ["guild", "studio", "foundry", "archive", "observatory", "orchard"];
const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ren", "sa", "tu", "vel", "do", "ni", "ra", "bo", "zen", "fa", "qui", "mar",
    "el", "ost", "yu", "pa", "th",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub src: usize,
    pub label: String,
    pub dst: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityGraph {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
}

pub fn entity_id(i: usize) -> String {
    format!("e{i:04}")
}

impl EntityGraph {
    /// Destination of the functional edge `(src, label)`, if any.
    pub fn follow(&self, src: usize, label: &str) -> Option<usize> {
        self.relations
            .iter()
            .find(|r| r.src == src && r.label == label)
            .map(|r| r.dst)
    }

    pub fn outgoing(&self, src: usize) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(move |r| r.src == src)
    }

    pub fn by_name(&self, name: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.name == name)
    }

    /// Indices of entities whose attributes include every `(key, value)` pair.
    pub fn matching(&self, constraints: &[(String, String)]) -> Vec<usize> {
        (0..self.entities.len())
            .filter(|&i| {
                let attrs = &self.entities[i].attributes;
                constraints.iter().all(|(k, v)| attrs.get(k) == Some(v))
            })
            .collect()
    }

    /// Entities reachable from `start` along relation direction.
    pub fn reachable_from(&self, start: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for r in self.outgoing(u) {
                if seen.insert(r.dst) {
                    queue.push_back(r.dst);
                }
            }
        }
        seen
    }

    /// Endpoints in range and labels functional per source.
    pub fn is_valid(&self) -> bool {
        let n = self.entities.len();
        let mut used = HashSet::new();
        self.relations
            .iter()
            .all(|r| r.src < n && r.dst < n && r.src != r.dst && used.insert((r.src, r.label.as_str())))
    }
}

fn make_name(rng: &mut impl rand::RngCore, taken: &HashSet<String>) -> String {
    loop {
        let parts = 2 + seeds::pick(rng, 2);
        let raw: String = (0..parts).map(|_| SYLLABLES[seeds::pick(rng, SYLLABLES.len())]).collect();
        let mut chars = raw.chars();
        let name = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect::<String>(),
            None => continue,
        };
        if !taken.contains(&name) {
            return name;
        }
    }
}

/// Seeded graph with `n_entities` entities over the first `n_labels` relation
/// labels (clamped to 1..=8). A spanning tree rooted at entity 0 makes every
/// entity reachable from it; extra edges add cross links.
pub fn generate_graph(seed: u64, n_entities: usize, n_labels: usize) -> EntityGraph {
    let n_labels = n_labels.clamp(1, LABELS.len());
    let mut rng = seeds::rng(seeds::derive(&[seed, 0x0067_7261_7068]));
    let mut taken = HashSet::new();
    let mut entities = Vec::with_capacity(n_entities);
    for i in 0..n_entities {
        let name = make_name(&mut rng, &taken);
        taken.insert(name.clone());
        let year = 1700 + seeds::pick(&mut rng, 321);
        let attributes = BTreeMap::from([
            ("color".to_string(), COLORS[seeds::pick(&mut rng, COLORS.len())].to_string()),
            ("region".to_string(), REGIONS[seeds::pick(&mut rng, REGIONS.len())].to_string()),
            ("year".to_string(), year.to_string()),
            ("kind".to_string(), KINDS[seeds::pick(&mut rng, KINDS.len())].to_string()),
        ]);
        entities.push(Entity {
            id: entity_id(i),
            name,
            attributes,
        });
    }

    let mut relations = Vec::new();
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let free_labels = |used: &HashSet<(usize, usize)>, src: usize| -> Vec<usize> {
        (0..n_labels).filter(|l| !used.contains(&(src, *l))).collect()
    };
    for child in 1..n_entities {
        let parents: Vec<usize> = (0..child).filter(|&p| !free_labels(&used, p).is_empty()).collect();
        let parent = parents[seeds::pick(&mut rng, parents.len())];
        let free = free_labels(&used, parent);
        let label = free[seeds::pick(&mut rng, free.len())];
        used.insert((parent, label));
        relations.push(Relation {
            src: parent,
            label: LABELS[label].0.to_string(),
            dst: child,
        });
    }
    if n_entities >= 2 {
        for src in 0..n_entities {
            for label in 0..n_labels {
                if used.contains(&(src, label)) || seeds::uniform(&mut rng) >= 0.35 {
                    continue;
                }
                let mut dst = seeds::pick(&mut rng, n_entities - 1);
                if dst >= src {
                    dst += 1;
                }
                used.insert((src, label));
                relations.push(Relation {
                    src,
                    label: LABELS[label].0.to_string(),
                    dst,
                });
            }
        }
    }
    EntityGraph { entities, relations }
}

/// A walk over relation edges; `dead_end` marks a path shorter than requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Walk {
    pub path: Vec<Relation>,
    pub dead_end: bool,
}

/// Seeded random simple path of `length` edges. Start nodes and edges are
/// tried in seeded order with backtracking; if no node admits the full
/// length, the longest path found is returned with `dead_end` set.
pub fn random_walk(graph: &EntityGraph, length: usize, seed: u64) -> Walk {
    assert!(length >= 1, "walk length must be at least 1");
    let mut rng = seeds::rng(seeds::derive(&[seed, 0x7761_6c6b]));
    let mut starts: Vec<usize> = (0..graph.entities.len()).collect();
    seeds::shuffle(&mut rng, &mut starts);

    fn extend(
        graph: &EntityGraph,
        rng: &mut impl rand::RngCore,
        path: &mut Vec<Relation>,
        visited: &mut Vec<usize>,
        length: usize,
        best: &mut Vec<Relation>,
    ) -> bool {
        if path.len() > best.len() {
            *best = path.clone();
        }
        if path.len() == length {
            return true;
        }
        let here = *visited.last().expect("walk has a start");
        let mut edges: Vec<&Relation> = graph.outgoing(here).filter(|r| !visited.contains(&r.dst)).collect();
        seeds::shuffle(rng, &mut edges);
        for e in edges {
            path.push(e.clone());
            visited.push(e.dst);
            if extend(graph, rng, path, visited, length, best) {
                return true;
            }
            path.pop();
            visited.pop();
        }
        false
    }

    let mut best = Vec::new();
    for s in starts {
        let mut path = Vec::new();
        let mut visited = vec![s];
        if extend(graph, &mut rng, &mut path, &mut visited, length, &mut best) {
            return Walk { path, dead_end: false };
        }
    }
    Walk {
        path: best,
        dead_end: true,
    }
}
