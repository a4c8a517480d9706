//! Rasterizes simulated-screen state to PNG. Output depends only on state.

use super::screen::SimulatedScreen;

const BACKGROUND: [u8; 3] = [0xee, 0xee, 0xee];
const WIDGET: [u8; 3] = [0xff, 0xff, 0xff];
const BUTTON: [u8; 3] = [0xd0, 0xe0, 0xf8];
const BORDER: [u8; 3] = [0x60, 0x60, 0x60];
const FOCUS: [u8; 3] = [0x1a, 0x6f, 0xd8];
const TEXT_BAR: [u8; 3] = [0x30, 0x30, 0x30];
const CURSOR: [u8; 3] = [0xd0, 0x10, 0x10];

struct Canvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        let mut pixels = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            pixels.extend_from_slice(&BACKGROUND);
        }
        Self { width, height, pixels }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = ((y as u32 * self.width + x as u32) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    fn fill(&mut self, x: u32, y: u32, w: u32, h: u32, color: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx as i64, yy as i64, color);
            }
        }
    }

    fn outline(&mut self, x: u32, y: u32, w: u32, h: u32, thickness: u32, color: [u8; 3]) {
        let t = thickness.min(w / 2).min(h / 2).max(1);
        self.fill(x, y, w, t, color);
        self.fill(x, y + h - t, w, t, color);
        self.fill(x, y, t, h, color);
        self.fill(x + w - t, y, t, h, color);
    }
}

pub(crate) fn render_png(screen: &SimulatedScreen) -> Vec<u8> {
    let mut c = Canvas::new(screen.width, screen.height);
    for (idx, w) in screen.widgets.iter().enumerate() {
        let [x, y, ww, hh] = w.spec.rect;
        let body = if w.spec.on_click.is_some() { BUTTON } else { WIDGET };
        c.fill(x, y, ww, hh, body);
        let focused = screen.focus == Some(idx);
        c.outline(x, y, ww, hh, if focused { 2 } else { 1 }, if focused { FOCUS } else { BORDER });
        // one 3px tick per character of text, clipped to the widget
        let inner = ww.saturating_sub(6);
        let bar = (w.text.chars().count() as u32).saturating_mul(3).min(inner);
        if bar > 0 && hh > 8 {
            c.fill(x + 3, y + hh / 2 - 1, bar, 2, TEXT_BAR);
        }
        if w.scroll > 0 && hh > 4 {
            let mark = (w.scroll as u32).min(hh - 4);
            c.fill(x + ww - 3, y + 2 + mark.min(hh - 5), 2, 2, TEXT_BAR);
        }
    }
    let (cx, cy) = (screen.cursor.0 as i64, screen.cursor.1 as i64);
    for d in -4..=4 {
        c.put(cx + d, cy, CURSOR);
        c.put(cx, cy + d, CURSOR);
    }
    encode(&c)
}

fn encode(c: &Canvas) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, c.width, c.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(&c.pixels).expect("in-memory PNG data");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::screen::{computer_action, ComputerAction, GuiManifest};
    use super::super::CallContext;
    use super::*;

    fn screen() -> SimulatedScreen {
        let m: GuiManifest = serde_json::from_value(serde_json::json!({
            "width": 64, "height": 48,
            "widgets": [{"id": "a", "rect": [4, 4, 40, 16]}]
        }))
        .unwrap();
        SimulatedScreen::new(&m).unwrap()
    }

    #[test]
    fn equal_state_equal_bytes() {
        let mut a = screen();
        let mut b = screen();
        for s in [&mut a, &mut b] {
            computer_action(s, ComputerAction::LeftClick { coordinate: Some([10, 10]) }, &CallContext::default());
            computer_action(s, ComputerAction::Type { text: "hey".into() }, &CallContext::default());
        }
        assert_eq!(a, b);
        assert_eq!(render_png(&a), render_png(&b));
    }

    #[test]
    fn state_change_changes_image() {
        let mut a = screen();
        let before = render_png(&a);
        computer_action(&mut a, ComputerAction::MouseMove { coordinate: [30, 30] }, &CallContext::default());
        assert_ne!(before, render_png(&a));
    }
}
