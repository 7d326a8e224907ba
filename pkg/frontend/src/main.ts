// Browser entry point. The service origin comes from ?api=http://host:port
// (defaults to the page's own origin, for a reverse-proxied deployment).

import { ApiClient } from './api.js';
import { AnnotatorApp } from './app.js';

const params = new URLSearchParams(window.location.search);
const base = params.get('api') ?? window.location.origin;

const root = document.getElementById('app');
if (!root) throw new Error('missing #app mount point');

const app = new AnnotatorApp(new ApiClient(base), root);
void app.start();
