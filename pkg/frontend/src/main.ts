// Browser entry point.

import { App, WsLike } from "./app.js";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");

const url = `ws://${window.location.host}/ws`;
const app = new App(root, (u) => new WebSocket(u) as unknown as WsLike, url);
app.connect();
app.startRenderLoop();
