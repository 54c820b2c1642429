use wasm_bindgen::prelude::*;

fn js_err(e: refnpr_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo(crate::Demo);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(resolution: usize, image_size: usize) -> Result<Demo, JsError> {
        crate::Demo::new(resolution, image_size).map(Demo).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.0.image_size()
    }

    pub fn render(&self, azimuth: f64, elevation: f64) -> Result<Vec<u8>, JsError> {
        self.0.render(azimuth, elevation).map_err(js_err)
    }

    pub fn depth(&self, azimuth: f64, elevation: f64) -> Result<Vec<u8>, JsError> {
        self.0.depth(azimuth, elevation).map_err(js_err)
    }

    #[wasm_bindgen(js_name = propagateHue)]
    pub fn propagate_hue(&mut self, azimuth: f64, elevation: f64, hue_degrees: f64) -> Result<usize, JsError> {
        self.0.propagate_hue(azimuth, elevation, hue_degrees).map_err(js_err)
    }

    pub fn reset(&mut self) {
        self.0.reset();
    }
}
