/**
 * Hard prompt templates: every class name is dropped into the same
 * sentence before text encoding, e.g. "a photo of a {class}". One
 * template per dataset; no ensembling.
 */

export const PLACEHOLDER = '{class}'

/** Editable per-domain defaults; pick one in the manifest or write your own. */
export const DEFAULT_TEMPLATES: Record<string, string> = {
  generic: 'a photo of a {class}',
  satellite: 'a centered satellite photo of {class}',
  texture: '{class} texture',
}

export class TemplateError extends Error {}

export function validateTemplate(template: string): void {
  const count = template.split(PLACEHOLDER).length - 1
  if (count === 0) {
    throw new TemplateError(`template ${JSON.stringify(template)} has no ${PLACEHOLDER} placeholder`)
  }
  if (count > 1) {
    throw new TemplateError(
      `template ${JSON.stringify(template)} has ${count} ${PLACEHOLDER} placeholders, expected exactly one`,
    )
  }
}

/** One rendered prompt per class, in the original class order. */
export function renderPrompts(template: string, classNames: string[]): string[] {
  validateTemplate(template)
  return classNames.map((name, index) => {
    if (name.length === 0) {
      throw new TemplateError(`class name at index ${index} is empty`)
    }
    return template.replace(PLACEHOLDER, name)
  })
}
