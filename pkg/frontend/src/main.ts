// Browser entry point. The page is served by the same process that hosts
// the API, so the base URL is empty and requests stay same-origin.

import { Api } from "./api.js";
import { initApp } from "./app.js";

initApp(document, new Api(""));
