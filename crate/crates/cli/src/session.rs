//! One interactive session: a scene, optional keyframes and a simulation,
//! driven by JSON messages. Transport-free; the server feeds it text frames.

use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use kinebasis::sim::{velocity_grid, DomainTimeline, GridFrame, Keyframe, SimConfig, SimState, Simulator};
use kinebasis::sketch::{fit_scene, DEFAULT_RIDGE};
use kinebasis::{BasisProvider, DomainSpec, GuideCurve, SketchScene};
use serde::Deserialize;
use serde_json::{json, Value};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_FIELD_RES: usize = 32;
/// Interval between streamed frames while playing.
pub const PLAY_INTERVAL: Duration = Duration::from_millis(33);

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Hello {
        #[serde(default)]
        v: Option<u32>,
        #[serde(default)]
        binary_grid: bool,
    },
    SetDomain {
        domain: DomainSpec,
    },
    AddCurve {
        curve: GuideCurve,
    },
    UpdateCurve {
        curve_id: u64,
        curve: GuideCurve,
    },
    RemoveCurve {
        curve_id: u64,
    },
    Fit,
    Step {
        #[serde(default = "one")]
        n: usize,
    },
    Play {
        #[serde(default)]
        dt: Option<f64>,
    },
    Pause,
    GetField {
        #[serde(default)]
        nx: Option<usize>,
        #[serde(default)]
        ny: Option<usize>,
    },
    GetParticles,
    SetKeyframes {
        keyframes: Vec<Keyframe>,
    },
    Reset,
}

fn one() -> usize {
    1
}

pub struct Session {
    provider: Arc<BasisProvider>,
    config: SimConfig,
    scene: SketchScene,
    curve_ids: Vec<u64>,
    next_curve_id: u64,
    timeline: Option<DomainTimeline>,
    state: Option<SimState>,
    playing: bool,
    refit_pending: bool,
    binary_grid: bool,
    field_res: (usize, usize),
}

type Reply = Result<Vec<Value>, String>;

impl Session {
    pub fn new(provider: Arc<BasisProvider>, config: SimConfig) -> Self {
        let dim = provider.dim();
        let mut domain = match provider.as_ref() {
            BasisProvider::Neural(n) => DomainSpec::new(
                dim,
                (0..n.model.config().m)
                    .map(|i| {
                        // Parked far outside the box until the client sets a domain.
                        kinebasis::Circle::new(vec![-10.0 - i as f64; dim], 0.01)
                    })
                    .collect(),
            ),
            BasisProvider::Analytic(_) => DomainSpec::empty(dim),
        };
        if matches!(provider.as_ref(), BasisProvider::Analytic(_)) {
            domain.corner_radius = 0.0;
        }
        Self {
            provider,
            config,
            scene: SketchScene::new(domain),
            curve_ids: Vec::new(),
            next_curve_id: 1,
            timeline: None,
            state: None,
            playing: false,
            refit_pending: false,
            binary_grid: false,
            field_res: (DEFAULT_FIELD_RES, DEFAULT_FIELD_RES),
        }
    }

    pub fn is_playing(&self) -> bool {
        self.playing
    }

    pub fn scene(&self) -> &SketchScene {
        &self.scene
    }

    /// Handle one text message; every request yields at least one reply, the
    /// last of which carries the request id.
    pub fn handle_text(&mut self, text: &str) -> Vec<Value> {
        let raw: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![error_reply(&Value::Null, format!("malformed JSON: {e}"))],
        };
        let id = raw.get("id").cloned().unwrap_or(Value::Null);
        let mut body = raw;
        if let Some(obj) = body.as_object_mut() {
            obj.remove("id");
        }
        let request: Request = match serde_json::from_value(body) {
            Ok(r) => r,
            Err(e) => return vec![error_reply(&id, format!("bad request: {e}"))],
        };
        match self.handle(request) {
            Ok(mut replies) => {
                if let Some(Value::Object(last)) = replies.last_mut() {
                    last.insert("id".into(), id);
                }
                replies
            }
            Err(message) => vec![error_reply(&id, message)],
        }
    }

    pub fn handle(&mut self, request: Request) -> Reply {
        match request {
            Request::Hello { v, binary_grid } => {
                if let Some(v) = v.filter(|&v| v != PROTOCOL_VERSION) {
                    return Err(format!("unsupported protocol version {v}"));
                }
                self.binary_grid = binary_grid;
                Ok(vec![json!({
                    "type": "hello_ok",
                    "v": PROTOCOL_VERSION,
                    "b": self.provider.b(),
                    "dim": self.provider.dim(),
                    "binary_grid": binary_grid,
                })])
            }
            Request::SetDomain { domain } => {
                self.check_domain(&domain)?;
                self.scene.domain = domain;
                self.after_edit()
            }
            Request::AddCurve { curve } => {
                self.check_curve(&curve)?;
                let id = self.next_curve_id;
                self.next_curve_id += 1;
                self.scene.curves.push(curve);
                self.curve_ids.push(id);
                let mut replies = self.after_edit()?;
                replies[0]["curve_id"] = json!(id);
                Ok(replies)
            }
            Request::UpdateCurve { curve_id, curve } => {
                self.check_curve(&curve)?;
                let i = self.curve_index(curve_id)?;
                self.scene.curves[i] = curve;
                self.after_edit()
            }
            Request::RemoveCurve { curve_id } => {
                let i = self.curve_index(curve_id)?;
                self.scene.curves.remove(i);
                self.curve_ids.remove(i);
                self.after_edit()
            }
            Request::Fit => {
                let fit = self.refit()?;
                Ok(vec![json!({
                    "type": "fit_ok",
                    "alpha": fit.0,
                    "residual": fit.1,
                    "n_samples": fit.2,
                })])
            }
            Request::Step { n } => {
                let mut replies = Vec::with_capacity(n + 1);
                for _ in 0..n {
                    replies.push(self.advance()?);
                }
                let t = self.state.as_ref().map_or(0.0, |s| s.time);
                replies.push(json!({ "type": "step_ok", "steps": n, "t": t }));
                Ok(replies)
            }
            Request::Play { dt } => {
                if self.state.is_none() {
                    return Err("no coefficients".into());
                }
                if let Some(dt) = dt {
                    if !(dt.is_finite() && dt >= 0.0) {
                        return Err("dt must be finite and non-negative".into());
                    }
                    self.config.dt = dt;
                }
                self.playing = true;
                Ok(vec![json!({ "type": "play_ok", "dt": self.config.dt })])
            }
            Request::Pause => {
                self.playing = false;
                Ok(vec![json!({ "type": "pause_ok" })])
            }
            Request::GetField { nx, ny } => {
                let nx = nx.unwrap_or(self.field_res.0);
                let ny = ny.unwrap_or(self.field_res.1);
                if nx == 0 || ny == 0 || nx * ny > 1 << 20 {
                    return Err("grid resolution out of range".into());
                }
                self.field_res = (nx, ny);
                let (t, alpha) = match &self.state {
                    Some(s) => (s.time, s.alpha.clone()),
                    None => (0.0, vec![0.0; self.provider.b()]),
                };
                let domain = self.domain_at(t);
                let grid = velocity_grid(&self.provider, &domain, &alpha, nx, ny).map_err(|e| e.to_string())?;
                Ok(vec![json!({ "type": "field", "t": t, "grid": self.grid_json(&grid) })])
            }
            Request::GetParticles => {
                let state = self.state.as_ref().ok_or("no coefficients")?;
                Ok(vec![json!({
                    "type": "particles",
                    "t": state.time,
                    "particles": self.particles_json(state),
                })])
            }
            Request::SetKeyframes { keyframes } => {
                if keyframes.is_empty() {
                    self.timeline = None;
                } else {
                    let timeline = DomainTimeline { keyframes };
                    timeline.validate().map_err(|e| e.to_string())?;
                    self.check_domain(&timeline.keyframes[0].domain)?;
                    self.timeline = Some(timeline);
                }
                Ok(vec![json!({ "type": "keyframes_ok" })])
            }
            Request::Reset => {
                self.state = None;
                self.playing = false;
                self.refit_pending = false;
                Ok(vec![json!({ "type": "reset_ok" })])
            }
        }
    }

    /// One play-loop step: a frame message, or an error that stops playback.
    pub fn tick(&mut self) -> Vec<Value> {
        if !self.playing {
            return Vec::new();
        }
        match self.advance() {
            Ok(frame) => vec![frame],
            Err(message) => {
                self.playing = false;
                vec![json!({ "type": "error", "id": Value::Null, "message": message })]
            }
        }
    }

    fn check_domain(&self, domain: &DomainSpec) -> Result<(), String> {
        domain.validate().map_err(|e| e.to_string())?;
        if domain.dim != self.provider.dim() {
            return Err(format!("domain dim {} does not match the basis ({})", domain.dim, self.provider.dim()));
        }
        if let BasisProvider::Neural(n) = self.provider.as_ref() {
            if domain.circles.len() != n.model.config().m {
                return Err(format!("the model expects {} circles", n.model.config().m));
            }
        }
        Ok(())
    }

    fn check_curve(&self, curve: &GuideCurve) -> Result<(), String> {
        if curve.points.iter().any(|p| p.len() != self.provider.dim()) {
            return Err("curve point dimension does not match the basis".into());
        }
        curve.eval(0.0).map(|_| ()).map_err(|e| e.to_string())
    }

    fn curve_index(&self, id: u64) -> Result<usize, String> {
        self.curve_ids
            .iter()
            .position(|&c| c == id)
            .ok_or_else(|| format!("unknown curve_id {id}"))
    }

    fn domain_at(&self, t: f64) -> DomainSpec {
        match &self.timeline {
            Some(tl) => tl.at(t),
            None => self.scene.domain.clone(),
        }
    }

    fn timeline(&self) -> DomainTimeline {
        self.timeline
            .clone()
            .unwrap_or_else(|| DomainTimeline::fixed(self.scene.domain.clone()))
    }

    fn after_edit(&mut self) -> Reply {
        let mut ack = json!({ "type": "scene_ok", "curves": self.scene.curves.len() });
        if self.playing {
            self.refit_pending = true;
        } else if !self.scene.curves.is_empty() {
            let (alpha, residual, _) = self.refit()?;
            ack["alpha"] = json!(alpha);
            ack["residual"] = json!(residual);
        }
        Ok(vec![ack])
    }

    /// Fit against the domain at the current time, keeping time and particles.
    fn refit(&mut self) -> Result<(Vec<f64>, f64, usize), String> {
        let t = self.state.as_ref().map_or(0.0, |s| s.time);
        let mut scene = self.scene.clone();
        scene.domain = self.domain_at(t);
        let fit = fit_scene(&self.provider, &scene, DEFAULT_RIDGE).map_err(|e| e.to_string())?;
        match &mut self.state {
            Some(s) => s.alpha = fit.alpha.clone(),
            None => {
                let sim = self.simulator()?;
                self.state = Some(sim.initial_state(fit.alpha.clone()).map_err(|e| e.to_string())?);
            }
        }
        self.refit_pending = false;
        Ok((fit.alpha, fit.residual, fit.n_samples))
    }

    fn simulator(&self) -> Result<Simulator<'_>, String> {
        let config = SimConfig {
            grid: self.field_res.0,
            ..self.config.clone()
        };
        Simulator::new(&self.provider, config, self.timeline()).map_err(|e| e.to_string())
    }

    fn advance(&mut self) -> Result<Value, String> {
        if self.state.is_none() {
            return Err("no coefficients".into());
        }
        if self.refit_pending {
            self.refit()?;
        }
        let next = {
            let sim = self.simulator()?;
            sim.advance(self.state.as_ref().expect("checked above")).map_err(|e| e.to_string())?
        };
        self.state = Some(next);
        self.frame_json()
    }

    fn frame_json(&self) -> Result<Value, String> {
        let state = self.state.as_ref().ok_or("no coefficients")?;
        let (nx, ny) = self.field_res;
        let grid = velocity_grid(&self.provider, &state.domain, &state.alpha, nx, ny).map_err(|e| e.to_string())?;
        Ok(json!({
            "type": "frame",
            "step": state.step,
            "t": state.time,
            "alpha": state.alpha,
            "grid": self.grid_json(&grid),
            "particles": self.particles_json(state),
        }))
    }

    fn particles_json(&self, state: &SimState) -> Value {
        let dim = self.provider.dim();
        json!(state.particles.chunks_exact(dim).collect::<Vec<_>>())
    }

    fn grid_json(&self, grid: &GridFrame) -> Value {
        if self.binary_grid {
            json!({
                "nx": grid.nx,
                "ny": grid.ny,
                "encoding": "f32le_base64",
                "u": encode_f32(&grid.u),
                "v": encode_f32(&grid.v),
            })
        } else {
            json!(grid)
        }
    }
}

pub fn encode_f32(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> Option<Vec<f32>> {
    let bytes = base64::engine::general_purpose::STANDARD.decode(text).ok()?;
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

fn error_reply(id: &Value, message: String) -> Value {
    json!({ "type": "error", "id": id, "message": message })
}
