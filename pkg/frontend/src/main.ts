// Page bootstrap: pick a scene preset, start a session, hand over to the app.

import { SessionApi } from './api';
import { ConsoleApp } from './app';

const SCENES: Record<string, unknown> = {
  tabletop: {
    robot_type: 'tabletop',
    objects: ['red block', 'blue block', 'green block', 'red bowl', 'blue bowl'],
    people: [],
    action_set: ['robot.pick_and_place(<object>, <target>)'],
  },
  kitchen: {
    robot_type: 'cooking',
    objects: ['coffee machine', 'kettle', 'bread', 'bacon'],
    people: [{ name: 'john', location: 'kitchen table' }],
    action_set: ['robot.serve(<item>)', 'robot.cook(<item>)'],
  },
};

export function boot(doc: Document = document): void {
  const baseUrl = (window as { CMDTRIAGE_BASE_URL?: string }).CMDTRIAGE_BASE_URL ?? '';
  const api = new SessionApi(baseUrl);
  const root = doc.getElementById('console')!;
  const banner = doc.getElementById('banner')!;
  const app = new ConsoleApp(api, root, banner);

  const picker = doc.getElementById('scene-picker') as HTMLSelectElement;
  for (const name of Object.keys(SCENES)) {
    const option = doc.createElement('option');
    option.value = name;
    option.textContent = name;
    picker.append(option);
  }
  const startButton = doc.getElementById('start-session')!;
  startButton.addEventListener('click', () => {
    void app.start(SCENES[picker.value]);
  });
}

if (typeof document !== 'undefined' && document.getElementById('console')) {
  boot();
}
