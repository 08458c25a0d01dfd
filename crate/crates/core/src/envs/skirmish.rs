//! Small grid combat game: `n` learned allies against `m` scripted enemies.
//!
//! Actions per ally: `0` no-op (dead agents only), `1` stop, `2..=5` move
//! north/south/east/west, `6 + j` attack enemy `j`. Distances are Chebyshev.
//! Units act sequentially in a fixed order: allies by index, then enemies by
//! index. Enemies attack the nearest ally in range, otherwise step toward it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvSpec, StepResult};
use crate::error::{Error, Result};

pub const NO_OP: usize = 0;
pub const STOP: usize = 1;
pub const ATTACK_BASE: usize = 6;
const MOVES: [(i64, i64); 4] = [(0, -1), (0, 1), (1, 0), (-1, 0)];
const SPAWN_COLUMNS: usize = 2;
pub const KILL_BONUS: f64 = 10.0;
pub const WIN_BONUS: f64 = 200.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkirmishConfig {
    pub width: usize,
    pub height: usize,
    pub n_allies: usize,
    pub n_enemies: usize,
    pub ally_hp: f64,
    pub enemy_hp: f64,
    pub ally_damage: f64,
    pub enemy_damage: f64,
    pub attack_range: usize,
    pub sight_range: usize,
    pub horizon: usize,
}

impl Default for SkirmishConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 6,
            n_allies: 5,
            n_enemies: 3,
            ally_hp: 5.0,
            enemy_hp: 4.0,
            ally_damage: 1.0,
            enemy_damage: 1.0,
            attack_range: 2,
            sight_range: 4,
            horizon: 40,
        }
    }
}

impl SkirmishConfig {
    fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("env.{field}"), reason))
            }
        };
        check(self.width >= 2 * SPAWN_COLUMNS, "width", "must be at least 4")?;
        check(self.height >= 2, "height", "must be at least 2")?;
        check(self.n_allies >= 1, "n_allies", "must be positive")?;
        check(self.n_enemies >= 1, "n_enemies", "must be positive")?;
        check(
            self.n_allies.max(self.n_enemies) <= SPAWN_COLUMNS * self.height,
            "height",
            "board too small to place all units",
        )?;
        for (v, f) in [
            (self.ally_hp, "ally_hp"),
            (self.enemy_hp, "enemy_hp"),
            (self.ally_damage, "ally_damage"),
            (self.enemy_damage, "enemy_damage"),
        ] {
            check(v.is_finite() && v > 0.0, f, "must be positive")?;
        }
        check(self.attack_range >= 1, "attack_range", "must be positive")?;
        check(self.sight_range >= 1, "sight_range", "must be positive")?;
        check(self.horizon >= 1, "horizon", "must be positive")
    }

    /// Unnormalised return of a perfect game: all enemy hit points, every
    /// kill bonus and the win bonus.
    pub fn max_raw_return(&self) -> f64 {
        self.n_enemies as f64 * (self.enemy_hp + KILL_BONUS) + WIN_BONUS
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Unit {
    x: i64,
    y: i64,
    hp: f64,
}

impl Unit {
    fn alive(&self) -> bool {
        self.hp > 0.0
    }

    fn dist(&self, other: &Unit) -> usize {
        (self.x - other.x).abs().max((self.y - other.y).abs()) as usize
    }
}

#[derive(Clone, Debug)]
pub struct SkirmishGrid {
    cfg: SkirmishConfig,
    spec: EnvSpec,
    allies: Vec<Unit>,
    enemies: Vec<Unit>,
    t: usize,
    done: bool,
    raw_return: f64,
}

impl SkirmishGrid {
    pub fn new(cfg: SkirmishConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_allies;
        let m = cfg.n_enemies;
        let spec = EnvSpec {
            n_agents: n,
            n_actions: ATTACK_BASE + m,
            obs_dim: 3 + 4 * (n - 1) + 5 * m,
            state_dim: 3 * (n + m) + 1,
            horizon: cfg.horizon,
            success: "all enemies dead before the horizon".into(),
        };
        let mut env = Self {
            cfg,
            spec,
            allies: Vec::new(),
            enemies: Vec::new(),
            t: 0,
            done: true,
            raw_return: 0.0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &SkirmishConfig {
        &self.cfg
    }

    /// Unnormalised return accumulated so far this episode.
    pub fn raw_return(&self) -> f64 {
        self.raw_return
    }

    fn occupied(&self, x: i64, y: i64) -> bool {
        self.allies
            .iter()
            .chain(&self.enemies)
            .any(|u| u.alive() && u.x == x && u.y == y)
    }

    fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.cfg.width && (y as usize) < self.cfg.height
    }

    fn avail(&self, i: usize) -> Vec<bool> {
        let mut a = vec![false; self.spec.n_actions];
        let me = &self.allies[i];
        if !me.alive() {
            a[NO_OP] = true;
            return a;
        }
        a[STOP] = true;
        for (k, (dx, dy)) in MOVES.iter().enumerate() {
            a[2 + k] = self.in_bounds(me.x + dx, me.y + dy);
        }
        for (j, e) in self.enemies.iter().enumerate() {
            a[ATTACK_BASE + j] = e.alive() && me.dist(e) <= self.cfg.attack_range;
        }
        a
    }

    fn observe(&self, i: usize) -> Vec<f64> {
        let mut o = Vec::with_capacity(self.spec.obs_dim);
        let me = &self.allies[i];
        if !me.alive() {
            o.resize(self.spec.obs_dim, 0.0);
            return o;
        }
        let sight = self.cfg.sight_range as f64;
        o.push(me.hp / self.cfg.ally_hp);
        o.push(me.x as f64 / (self.cfg.width - 1) as f64);
        o.push(me.y as f64 / (self.cfg.height - 1) as f64);
        for (j, a) in self.allies.iter().enumerate() {
            if j == i {
                continue;
            }
            if a.alive() && me.dist(a) <= self.cfg.sight_range {
                o.extend([
                    1.0,
                    (a.x - me.x) as f64 / sight,
                    (a.y - me.y) as f64 / sight,
                    a.hp / self.cfg.ally_hp,
                ]);
            } else {
                o.extend([0.0; 4]);
            }
        }
        for e in &self.enemies {
            let d = me.dist(e);
            if e.alive() && d <= self.cfg.sight_range {
                o.extend([
                    1.0,
                    (e.x - me.x) as f64 / sight,
                    (e.y - me.y) as f64 / sight,
                    e.hp / self.cfg.enemy_hp,
                    (d <= self.cfg.attack_range) as u8 as f64,
                ]);
            } else {
                o.extend([0.0; 5]);
            }
        }
        o
    }

    fn state(&self) -> Vec<f64> {
        let w = (self.cfg.width - 1) as f64;
        let h = (self.cfg.height - 1) as f64;
        let mut s = Vec::with_capacity(self.spec.state_dim);
        for (units, hp) in [(&self.allies, self.cfg.ally_hp), (&self.enemies, self.cfg.enemy_hp)] {
            for u in units {
                if u.alive() {
                    s.extend([u.hp / hp, u.x as f64 / w, u.y as f64 / h]);
                } else {
                    s.extend([0.0; 3]);
                }
            }
        }
        s.push(self.t as f64 / self.cfg.horizon as f64);
        s
    }

    fn result(&self, reward: f64, truncated: bool, success: bool) -> StepResult {
        let n = self.cfg.n_allies;
        StepResult {
            observations: (0..n).map(|i| self.observe(i)).collect(),
            state: self.state(),
            reward,
            terminated: self.done,
            truncated,
            success,
            alive: self.allies.iter().map(Unit::alive).collect(),
            avail_actions: (0..n).map(|i| self.avail(i)).collect(),
            health: Some(self.allies.iter().map(|u| u.hp.max(0.0) / self.cfg.ally_hp).collect()),
        }
    }

    fn try_move(&mut self, ally: bool, idx: usize, dx: i64, dy: i64) -> bool {
        let (x, y) = {
            let u = if ally { &self.allies[idx] } else { &self.enemies[idx] };
            (u.x + dx, u.y + dy)
        };
        if !self.in_bounds(x, y) || self.occupied(x, y) {
            return false;
        }
        let u = if ally {
            &mut self.allies[idx]
        } else {
            &mut self.enemies[idx]
        };
        u.x = x;
        u.y = y;
        true
    }

    fn enemy_act(&mut self, j: usize) {
        let me = self.enemies[j].clone();
        let target = self
            .allies
            .iter()
            .enumerate()
            .filter(|(_, a)| a.alive())
            .min_by_key(|(i, a)| (me.dist(a), *i))
            .map(|(i, a)| (i, a.clone()));
        let Some((i, ally)) = target else { return };
        if me.dist(&ally) <= self.cfg.attack_range {
            self.allies[i].hp -= self.cfg.enemy_damage;
            return;
        }
        let dx = (ally.x - me.x).signum();
        let dy = (ally.y - me.y).signum();
        let x_first = (ally.x - me.x).abs() >= (ally.y - me.y).abs();
        let steps = if x_first { [(dx, 0), (0, dy)] } else { [(0, dy), (dx, 0)] };
        for (sx, sy) in steps {
            if (sx, sy) != (0, 0) && self.try_move(false, j, sx, sy) {
                return;
            }
        }
    }
}

impl Env for SkirmishGrid {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = |x0: usize, rng: &mut ChaCha8Rng| {
            let mut c: Vec<(i64, i64)> = (x0..x0 + SPAWN_COLUMNS)
                .flat_map(|x| (0..self.cfg.height).map(move |y| (x as i64, y as i64)))
                .collect();
            c.shuffle(rng);
            c
        };
        let left = cells(0, &mut rng);
        let right = cells(self.cfg.width - SPAWN_COLUMNS, &mut rng);
        self.allies = left[..self.cfg.n_allies]
            .iter()
            .map(|&(x, y)| Unit { x, y, hp: self.cfg.ally_hp })
            .collect();
        self.enemies = right[..self.cfg.n_enemies]
            .iter()
            .map(|&(x, y)| Unit { x, y, hp: self.cfg.enemy_hp })
            .collect();
        self.t = 0;
        self.done = false;
        self.raw_return = 0.0;
        self.result(0.0, false, false)
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        if actions.len() != self.cfg.n_allies {
            return Err(Error::Shape {
                op: "SkirmishGrid::step",
                lhs: vec![self.cfg.n_allies],
                rhs: vec![actions.len()],
            });
        }
        for (agent, &a) in actions.iter().enumerate() {
            if a >= self.spec.n_actions || !self.avail(agent)[a] {
                return Err(Error::InvalidAction { agent, action: a });
            }
        }

        let mut raw = 0.0;
        for (i, &a) in actions.iter().enumerate() {
            if !self.allies[i].alive() {
                continue;
            }
            match a {
                NO_OP | STOP => {}
                2..=5 => {
                    let (dx, dy) = MOVES[a - 2];
                    self.try_move(true, i, dx, dy);
                }
                _ => {
                    let e = &mut self.enemies[a - ATTACK_BASE];
                    if e.alive() {
                        let dealt = self.cfg.ally_damage.min(e.hp);
                        e.hp -= dealt;
                        raw += dealt;
                        if !e.alive() {
                            raw += KILL_BONUS;
                        }
                    }
                }
            }
        }
        for j in 0..self.enemies.len() {
            if self.enemies[j].alive() {
                self.enemy_act(j);
            }
        }

        let won = self.enemies.iter().all(|e| !e.alive());
        let lost = self.allies.iter().all(|a| !a.alive());
        if won {
            raw += WIN_BONUS;
        }
        self.t += 1;
        let truncated = !won && !lost && self.t >= self.cfg.horizon;
        self.done = won || lost || truncated;
        self.raw_return += raw;
        Ok(self.result(raw / self.cfg.max_raw_return(), truncated, won))
    }

    fn clone_box(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
