/**
 * Dependency-free HTML rendering for the survey wizard.  Each function
 * returns a string so the output is equally usable from a server template,
 * a static page, or a DOM container's innerHTML.
 */

import type { FlowStatus } from './flow';
import type { QuestionPayload } from './types';

export function escapeHtml(s: string): string {
    return s
        .replace(/&/g, '&amp;')
        .replace(/</g, '&lt;')
        .replace(/>/g, '&gt;')
        .replace(/"/g, '&quot;')
        .replace(/'/g, '&#39;');
}

export function escapeAttr(s: string): string {
    return escapeHtml(s);
}

function progressBar(round: number, maxRounds: number): string {
    const segments: string[] = [];
    for (let i = 1; i <= maxRounds; i++) {
        const cls = i < round ? ' completed' : i === round ? ' current' : '';
        segments.push(`<span class="survey-progress-dot${cls}">${i}</span>`);
    }
    return `<div class="survey-progress" aria-label="round ${round} of ${maxRounds}">${segments.join('')}</div>`;
}

function coverageBadge(coverage: number): string {
    const pct = (coverage * 100).toFixed(0);
    return `<span class="survey-coverage" title="share of the original range still undisclosed">${pct}% of range undisclosed</span>`;
}

export function renderQuestion(payload: QuestionPayload): string {
    const choices = payload.choices
        .map(
            (label, i) =>
                `<label class="survey-choice"><input type="radio" name="choice" value="${i + 1}"><span>${escapeHtml(label)}</span></label>`,
        )
        .join('\n    ');

    const exactHtml = payload.allow_exact
        ? `<div class="survey-exact">
      <label for="exact-value">Or type the exact value</label>
      <input type="number" id="exact-value" name="exact" step="any" inputmode="decimal">
    </div>`
        : '';

    const optOutHtml = payload.allow_opt_out
        ? '<button type="button" class="survey-opt-out">Prefer not to answer</button>'
        : '';

    const multiRound = payload.max_rounds > 1;
    const roundsHtml = multiRound ? progressBar(payload.round, payload.max_rounds) : '';

    return `<div class="survey-question" data-issue-id="${escapeAttr(payload.issue_id)}" data-round="${payload.round}">
  ${roundsHtml}
  <h3 class="survey-prompt">${escapeHtml(payload.prompt)}</h3>
  ${coverageBadge(payload.coverage)}
  <fieldset class="survey-choices">
    ${choices}
  </fieldset>
  ${exactHtml}
  <div class="survey-actions">
    <button type="button" class="survey-submit">Submit</button>
    ${optOutHtml}
  </div>
</div>`;
}

const TERMINAL_MESSAGES: Record<string, string> = {
    done: 'Thank you — your answer has been recorded.',
    opted_out: 'No problem — this question has been skipped.',
    withheld: 'Thank you — your answer was not released this time.',
};

export function renderTerminal(status: FlowStatus): string {
    const message = TERMINAL_MESSAGES[status];
    if (message === undefined) {
        throw new Error(`not a terminal status: ${status}`);
    }
    return `<div class="survey-terminal survey-${status}"><p>${escapeHtml(message)}</p></div>`;
}

export function renderError(message: string): string {
    return `<div class="survey-error" role="alert">${escapeHtml(message)}</div>`;
}
