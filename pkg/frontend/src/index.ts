export { ApiError, SurveyClient, fetchTransport } from './client';
export type { Transport, TransportResponse } from './client';
export { FlowStateError, QuestionFlow } from './flow';
export type { FlowStatus, RoundRecord } from './flow';
export { renderError, renderQuestion, renderTerminal, escapeHtml } from './render';
export { checkExactEntry, locateChoice } from './validation';
export type { ExactCheck } from './validation';
export * from './types';
