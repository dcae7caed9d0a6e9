import { install } from "./instrumentation.js";

install(window);
