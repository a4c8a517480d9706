use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::render;
use super::CallContext;
use crate::mcp::ToolResult;

/// Names an app command run when a widget is clicked. `args_from` maps
/// argument names to widget ids whose text buffers supply the values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBinding {
    pub command: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args_from: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidgetSpec {
    pub id: String,
    /// x, y, width, height in pixels.
    pub rect: [u32; 4],
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_click: Option<ActionBinding>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
}

/// Screen layout published by an app for the simulated GUI backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuiManifest {
    pub width: u32,
    pub height: u32,
    pub widgets: Vec<WidgetSpec>,
}

/// Executes widget bindings against the application.
pub trait BindingHandler: Send {
    fn invoke(&mut self, command: &str, args: &Map<String, Value>) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Widget {
    pub spec: WidgetSpec,
    pub text: String,
    pub scroll: i64,
}

/// A deterministic stand-in for a desktop: widgets, a cursor, keyboard
/// focus, held modifiers and the mouse button.
pub struct SimulatedScreen {
    pub(crate) width: u32,
    pub(crate) height: u32,
    pub(crate) widgets: Vec<Widget>,
    pub(crate) cursor: (u32, u32),
    pub(crate) focus: Option<usize>,
    pub(crate) held: BTreeSet<String>,
    pub(crate) mouse_down: Option<(u32, u32)>,
    pub(crate) key_log: Vec<String>,
    handler: Option<Box<dyn BindingHandler>>,
}

impl fmt::Debug for SimulatedScreen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimulatedScreen")
            .field("size", &(self.width, self.height))
            .field("widgets", &self.widgets)
            .field("cursor", &self.cursor)
            .field("focus", &self.focus)
            .field("held", &self.held)
            .finish_non_exhaustive()
    }
}

impl PartialEq for SimulatedScreen {
    /// Equality of visible state; the binding handler is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.widgets == other.widgets
            && self.cursor == other.cursor
            && self.focus == other.focus
            && self.held == other.held
            && self.mouse_down == other.mouse_down
    }
}

impl SimulatedScreen {
    /// Builds a screen, rejecting widgets that do not fit or duplicate ids.
    pub fn new(manifest: &GuiManifest) -> Result<Self, String> {
        if manifest.width == 0 || manifest.height == 0 {
            return Err("screen must have a non-zero size".into());
        }
        let mut ids = BTreeSet::new();
        for w in &manifest.widgets {
            let [x, y, ww, hh] = w.rect;
            if ww == 0 || hh == 0 || x + ww > manifest.width || y + hh > manifest.height {
                return Err(format!("widget `{}` lies outside the screen", w.id));
            }
            if !ids.insert(w.id.as_str()) {
                return Err(format!("duplicate widget id `{}`", w.id));
            }
        }
        Ok(Self {
            width: manifest.width,
            height: manifest.height,
            widgets: manifest
                .widgets
                .iter()
                .map(|spec| Widget {
                    text: spec.text.clone(),
                    spec: spec.clone(),
                    scroll: 0,
                })
                .collect(),
            cursor: (0, 0),
            focus: None,
            held: BTreeSet::new(),
            mouse_down: None,
            key_log: Vec::new(),
            handler: None,
        })
    }

    pub fn with_handler(mut self, handler: Box<dyn BindingHandler>) -> Self {
        self.handler = Some(handler);
        self
    }

    pub fn set_handler(&mut self, handler: Box<dyn BindingHandler>) {
        self.handler = Some(handler);
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn cursor(&self) -> (u32, u32) {
        self.cursor
    }

    pub fn focused(&self) -> Option<&str> {
        self.focus.map(|i| self.widgets[i].spec.id.as_str())
    }

    pub fn widget_text(&self, id: &str) -> Option<&str> {
        self.widgets.iter().find(|w| w.spec.id == id).map(|w| w.text.as_str())
    }

    pub fn held_keys(&self) -> impl Iterator<Item = &str> {
        self.held.iter().map(String::as_str)
    }

    /// Keys pressed so far, with modifiers, e.g. `ctrl+a`.
    pub fn key_log(&self) -> &[String] {
        &self.key_log
    }

    /// Center of a widget, handy for scripted plans.
    pub fn widget_center(&self, id: &str) -> Option<(u32, u32)> {
        self.widgets
            .iter()
            .find(|w| w.spec.id == id)
            .map(|w| (w.spec.rect[0] + w.spec.rect[2] / 2, w.spec.rect[1] + w.spec.rect[3] / 2))
    }

    pub fn screenshot_png(&self) -> Vec<u8> {
        render::render_png(self)
    }

    fn hit(&self, (x, y): (u32, u32)) -> Option<usize> {
        self.widgets.iter().rposition(|w| {
            let [wx, wy, ww, wh] = w.spec.rect;
            x >= wx && x < wx + ww && y >= wy && y < wy + wh
        })
    }

    fn check_point(&self, p: [i64; 2]) -> Result<(u32, u32), String> {
        let [x, y] = p;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return Err(format!(
                "coordinate ({x}, {y}) is outside the {}x{} screen",
                self.width, self.height
            ));
        }
        Ok((x as u32, y as u32))
    }

    fn move_to(&mut self, coordinate: Option<[i64; 2]>) -> Result<(), String> {
        if let Some(c) = coordinate {
            self.cursor = self.check_point(c)?;
        }
        Ok(())
    }

    fn with_mods(mods: &BTreeSet<String>, base: &str) -> String {
        let mut parts: Vec<&str> = mods.iter().map(String::as_str).collect();
        parts.push(base);
        parts.join("+")
    }

    /// Left click at the cursor: focuses the widget under it and runs its
    /// binding.
    fn click(&mut self, mods: &BTreeSet<String>) -> Result<String, String> {
        let hit = self.hit(self.cursor);
        self.focus = hit;
        let Some(idx) = hit else {
            return Ok(format!("clicked empty area at X={},Y={}", self.cursor.0, self.cursor.1));
        };
        let id = self.widgets[idx].spec.id.clone();
        let prefix = if mods.is_empty() {
            format!("clicked {id}")
        } else {
            format!("clicked {id} with {}", mods.iter().cloned().collect::<Vec<_>>().join("+"))
        };
        let Some(binding) = self.widgets[idx].spec.on_click.clone() else {
            return Ok(prefix);
        };
        let mut args = Map::new();
        for (arg, source) in &binding.args_from {
            let text = self
                .widget_text(source)
                .ok_or_else(|| format!("binding refers to unknown widget `{source}`"))?;
            args.insert(arg.clone(), Value::String(text.to_owned()));
        }
        let handler = self
            .handler
            .as_mut()
            .ok_or_else(|| "no application is attached to this screen".to_string())?;
        let out = handler.invoke(&binding.command, &args)?;
        Ok(if out.is_empty() { prefix } else { format!("{prefix}: {out}") })
    }

    fn clicks(&mut self, n: usize, mods: &BTreeSet<String>) -> Result<String, String> {
        let mut outputs = Vec::with_capacity(n);
        for _ in 0..n {
            outputs.push(self.click(mods)?);
        }
        Ok(outputs.join("\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
}

/// Computer tool input, discriminated by `action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ComputerAction {
    Key { text: String },
    Type { text: String },
    MouseMove { coordinate: [i64; 2] },
    LeftClick { coordinate: Option<[i64; 2]> },
    LeftClickDrag { start_coordinate: [i64; 2], coordinate: [i64; 2] },
    RightClick { coordinate: Option<[i64; 2]> },
    MiddleClick { coordinate: Option<[i64; 2]> },
    DoubleClick { coordinate: Option<[i64; 2]> },
    TripleClick { coordinate: Option<[i64; 2]> },
    LeftMouseDown { coordinate: Option<[i64; 2]> },
    LeftMouseUp { coordinate: Option<[i64; 2]> },
    Scroll {
        coordinate: Option<[i64; 2]>,
        scroll_direction: ScrollDirection,
        #[serde(default = "one")]
        scroll_amount: u32,
    },
    HoldKey { text: String },
    /// Seconds.
    Wait { duration: f64 },
    Screenshot,
    CursorPosition,
}

fn one() -> u32 {
    1
}

impl ComputerAction {
    pub fn name(&self) -> &'static str {
        match self {
            ComputerAction::Key { .. } => "key",
            ComputerAction::Type { .. } => "type",
            ComputerAction::MouseMove { .. } => "mouse_move",
            ComputerAction::LeftClick { .. } => "left_click",
            ComputerAction::LeftClickDrag { .. } => "left_click_drag",
            ComputerAction::RightClick { .. } => "right_click",
            ComputerAction::MiddleClick { .. } => "middle_click",
            ComputerAction::DoubleClick { .. } => "double_click",
            ComputerAction::TripleClick { .. } => "triple_click",
            ComputerAction::LeftMouseDown { .. } => "left_mouse_down",
            ComputerAction::LeftMouseUp { .. } => "left_mouse_up",
            ComputerAction::Scroll { .. } => "scroll",
            ComputerAction::HoldKey { .. } => "hold_key",
            ComputerAction::Wait { .. } => "wait",
            ComputerAction::Screenshot => "screenshot",
            ComputerAction::CursorPosition => "cursor_position",
        }
    }

    /// Every action name, observation actions last.
    pub const NAMES: [&'static str; 16] = [
        "key",
        "type",
        "mouse_move",
        "left_click",
        "left_click_drag",
        "right_click",
        "middle_click",
        "double_click",
        "left_mouse_down",
        "left_mouse_up",
        "scroll",
        "hold_key",
        "wait",
        "triple_click",
        "screenshot",
        "cursor_position",
    ];
}

/// Applies one action to the screen.
///
/// Modifiers pressed with `hold_key` apply to the next tool call only and
/// are released when it returns; pressing a held key again releases it.
pub fn computer_action(screen: &mut SimulatedScreen, action: ComputerAction, ctx: &CallContext) -> ToolResult {
    let mods = std::mem::take(&mut screen.held);
    match apply(screen, action, &mods, ctx) {
        Ok(result) => result,
        Err(e) => ToolResult::error(e),
    }
}

fn apply(
    s: &mut SimulatedScreen,
    action: ComputerAction,
    mods: &BTreeSet<String>,
    ctx: &CallContext,
) -> Result<ToolResult, String> {
    use ComputerAction as A;
    let out = match action {
        A::Screenshot => {
            let png = s.screenshot_png();
            return Ok(ToolResult::image(base64::engine::general_purpose::STANDARD.encode(png)));
        }
        A::CursorPosition => format!("X={},Y={}", s.cursor.0, s.cursor.1),
        A::MouseMove { coordinate } => {
            s.move_to(Some(coordinate))?;
            format!("moved to X={},Y={}", s.cursor.0, s.cursor.1)
        }
        A::LeftClick { coordinate } => {
            s.move_to(coordinate)?;
            s.click(mods)?
        }
        A::DoubleClick { coordinate } => {
            s.move_to(coordinate)?;
            s.clicks(2, mods)?
        }
        A::TripleClick { coordinate } => {
            s.move_to(coordinate)?;
            s.clicks(3, mods)?
        }
        A::RightClick { coordinate } | A::MiddleClick { coordinate } => {
            let button = if matches!(action, A::RightClick { .. }) { "right" } else { "middle" };
            s.move_to(coordinate)?;
            match s.hit(s.cursor) {
                Some(i) => format!("{button} clicked {}", s.widgets[i].spec.id),
                None => format!("{button} clicked empty area at X={},Y={}", s.cursor.0, s.cursor.1),
            }
        }
        A::LeftMouseDown { coordinate } => {
            s.move_to(coordinate)?;
            if s.mouse_down.is_some() {
                return Err("left mouse button is already down".into());
            }
            s.mouse_down = Some(s.cursor);
            format!("mouse down at X={},Y={}", s.cursor.0, s.cursor.1)
        }
        A::LeftMouseUp { coordinate } => {
            s.move_to(coordinate)?;
            let start = s.mouse_down.take().ok_or("left mouse button is not down")?;
            release(s, start, mods)?
        }
        A::LeftClickDrag { start_coordinate, coordinate } => {
            let start = s.check_point(start_coordinate)?;
            let end = s.check_point(coordinate)?;
            s.cursor = start;
            s.mouse_down = Some(start);
            s.cursor = end;
            s.mouse_down = None;
            release(s, start, mods)?
        }
        A::Scroll { coordinate, scroll_direction, scroll_amount } => {
            s.move_to(coordinate)?;
            let idx = s.hit(s.cursor).ok_or("nothing to scroll here")?;
            let delta = scroll_amount as i64;
            let w = &mut s.widgets[idx];
            w.scroll = match scroll_direction {
                ScrollDirection::Down => w.scroll + delta,
                ScrollDirection::Up => (w.scroll - delta).max(0),
            };
            format!("scrolled {} to offset {}", w.spec.id, w.scroll)
        }
        A::Key { text } => {
            let combo = SimulatedScreen::with_mods(mods, &text);
            if let Some(i) = s.focus {
                match text.to_ascii_lowercase().as_str() {
                    "backspace" => {
                        s.widgets[i].text.pop();
                    }
                    "return" | "enter" if s.widgets[i].spec.on_click.is_some() => {
                        s.key_log.push(combo.clone());
                        let out = s.click(mods)?;
                        return Ok(ToolResult::output(format!("pressed {combo}\n{out}")));
                    }
                    _ => {}
                }
            }
            s.key_log.push(combo.clone());
            format!("pressed {combo}")
        }
        A::Type { text } => {
            let i = s.focus.ok_or("no focused element")?;
            s.widgets[i].text.push_str(&text);
            format!("typed {} characters into {}", text.chars().count(), s.widgets[i].spec.id)
        }
        A::HoldKey { text } => {
            let mut held = mods.clone();
            if !held.remove(&text) {
                held.insert(text.clone());
            }
            let out = if held.contains(&text) {
                format!("holding {text}")
            } else {
                format!("released {text}")
            };
            s.held = held;
            out
        }
        A::Wait { duration } => {
            if !duration.is_finite() || duration < 0.0 {
                return Err("duration must be a non-negative number of seconds".into());
            }
            let want = Duration::from_secs_f64(duration.min(86_400.0));
            let slept = ctx.clamp(want);
            std::thread::sleep(slept);
            format!("waited {} ms", slept.as_millis())
        }
    };
    Ok(ToolResult::output(out))
}

fn release(s: &mut SimulatedScreen, start: (u32, u32), mods: &BTreeSet<String>) -> Result<String, String> {
    let end = s.cursor;
    if start == end || (s.hit(start).is_some() && s.hit(start) == s.hit(end)) {
        s.click(mods)
    } else {
        Ok(format!(
            "dragged from X={},Y={} to X={},Y={}",
            start.0, start.1, end.0, end.1
        ))
    }
}
